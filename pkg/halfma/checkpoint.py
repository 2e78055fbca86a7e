import hashlib
import json
import os
import tempfile
from typing import Any

from halfma.utils import to_builtin


def digest_text(text: str) -> str:
    hasher = hashlib.new("sha256")
    hasher.update(text.encode())
    return hasher.hexdigest()


def write_atomic(path: str, text: str) -> str:
    """
    Write text through a temporary file in the same directory and move it
    into place, so readers never observe a partial result.

    :param path: destination
    :param text: contents
    :returns: SHA-256 digest of the contents
    """
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)
    with tempfile.NamedTemporaryFile('wt', dir=directory, prefix='.halfma.', delete=False) as f:
        f.write(text)
        name = f.name
    os.replace(name, path)
    return digest_text(text)


def dump_json(path: str, data: Any) -> str:
    return write_atomic(path, json.dumps(to_builtin(data), indent=2, sort_keys=True) + '\n')
