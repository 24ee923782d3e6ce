"""copulapde test package."""

from __future__ import print_function
