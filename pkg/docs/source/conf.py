#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# halfma documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

# The package is imported from the checkout by autodoc.
import os
import sys
sys.path.insert(0, os.path.abspath('../..'))

from halfma import __version__  # noqa: E402

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.todo',
    'sphinx.ext.coverage',
    'sphinx.ext.mathjax',
    'sphinx.ext.autodoc'
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

# General information about the project.
project = 'halfma'
copyright = '2026, halfma developers'
author = 'halfma developers'

# The short X.Y version.
version = f'0.1.{__version__}'
# The full version, including alpha/beta/rc tags.
release = __version__

language = None
exclude_patterns = []
pygments_style = 'sphinx'
todo_include_todos = True

# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'halfmadoc'

# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}
latex_documents = [
    (master_doc, 'halfma.tex', 'halfma Documentation',
     author, 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'halfma-lab', 'halfma Documentation',
     [author], 1)
]

# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
    (master_doc, 'halfma', 'halfma Documentation',
     author, 'halfma', 'Monge-Ampère solutions in half spaces.',
     'Miscellaneous'),
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
}
