"""Helper methods."""

from tempfile import mkstemp
import hashlib
import json
import os
import sys
from .exceptions import ConfigError

if sys.version_info >= (3, 0):
    basestring = str


def atomic_write(path, data, mode='w'):
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    ensure_dir(directory)
    fd, tmp_path = mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, mode) as fp:
            fp.write(data)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def dump_json(path, data):
    """Atomically write ``data`` as sorted, indented JSON."""
    return atomic_write(path, json.dumps(data, indent=2, sort_keys=True) +
                        '\n')


def ensure_dir(path):
    """Ensure directory ``path`` exists."""
    if path and not os.path.isdir(path):
        os.makedirs(path)


def file_sha256(path):
    """Return the hex sha256 digest of the file at ``path``."""
    digest = hashlib.sha256()
    with open(path, 'rb') as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def parse_bool(value):
    """Return whether or not value represents a True or False value."""
    if isinstance(value, basestring):
        return value.lower() in ['1', 'on', 't', 'true', 'y', 'yes']
    return bool(value)


def parse_names(item_or_items):
    """Return the ordered unique tokens in item_or_items.

    :param item_or_items: Can either be a string, or an iterable of strings.
      Each string can contain one or more names separated by commas, these
      names will be expanded, and empty tokens will be removed. Order of
      first appearance is kept because column order is significant.

    """
    if item_or_items is None:
        return None
    if isinstance(item_or_items, basestring):
        item_or_items = [item_or_items]

    names = []
    for item in item_or_items:
        for token in (x.strip() for x in item.split(',') if x.strip()):
            if token not in names:
                names.append(token)
    return names if names else None


def parse_floats(value, count=None, name='value'):
    """Return a list of floats from a comma separated string or iterable.

    When ``count`` is given the number of values must match.

    """
    if isinstance(value, basestring):
        value = [x for x in value.split(',') if x.strip()]
    try:
        numbers = [float(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError('Invalid {0}s: {1!r}'.format(name, value))
    if count is not None and len(numbers) != count:
        raise ConfigError('Expected {0}, found {1}'.format(
            plural(count, name), len(numbers)))
    return numbers


def parse_weights(value, count=None):
    """Return a list of floats from ``value``, or ``'equal'``."""
    if value is None or (isinstance(value, basestring) and
                         value.strip().lower() == 'equal'):
        return 'equal'
    return parse_floats(value, count, 'weight')


def plural(items, word):
    """Return number of items followed by the right form  of ``word``.

    ``items`` can either be an int or an object whose cardinality can be
    discovered via `len(items)`.

    The plural of ``word`` is assumed to be made by adding an ``s``.

    """
    item_count = items if isinstance(items, int) else len(items)
    word = word if item_count == 1 else word + 's'
    return '{0} {1}'.format(item_count, word)
