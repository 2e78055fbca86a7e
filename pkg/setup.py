from setuptools import setup, find_packages

from halfma import __version__

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="halfma",
    version=f"0.1.{__version__}",
    description="Numerical laboratory for Monge-Ampere equations in half spaces",
    license="GNU Lesser General Public License v2 (LGPLv2)",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "numpy>=1.17",
        "scipy>=1.6"
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Programming Language :: Python :: 3",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: GNU Lesser General Public License v2 (LGPLv2)",
        "Operating System :: POSIX :: Linux",
    ],
    python_requires='>=3.7',
    scripts=["halfma-lab"]
)
