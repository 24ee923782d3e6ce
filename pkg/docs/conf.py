# -*- coding: utf-8 -*-
"""Sphinx documentation configuration."""

import sys
import os

# Document the package from the source tree.
sys.path.insert(0, os.path.abspath('..'))
import copulapde  # noqa: E402

# -- General configuration ------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.intersphinx',
              'sphinx.ext.mathjax']
templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'copulapde'
copyright = u'copulapde contributors'

version = copulapde.__version__
release = version

exclude_patterns = ['_build']
pygments_style = 'sphinx'
autodoc_member_order = 'bysource'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'pandas': ('https://pandas.pydata.org/docs', None)}

# -- Options for HTML output ----------------------------------------------

html_theme = 'default'
html_static_path = []
htmlhelp_basename = 'copulapdedoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    ('index', 'copulapde', u'copulapde Documentation',
     [u'copulapde contributors'], 1)
]
