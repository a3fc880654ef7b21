# Sphinx configuration for the naht-mat documentation.
#
# Build with ``make html`` from docs/ (or ``sphinx-build source build``);
# numpydoc renders the docstrings of the naht.mat modules.

import naht.mat
import sphinx_rtd_theme

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.githubpages',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'IPython.sphinxext.ipython_directive',
    'IPython.sphinxext.ipython_console_highlighting',
    'numpydoc',
    'sphinx_copybutton',
]

autosummary_generate = True
numpydoc_show_class_members = False

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'naht.mat'
copyright = 'naht.mat Contributors'
author = 'naht.mat Contributors'
version = release = naht.mat.__version__

exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_static_path = ['_static']
html_sidebars = {'**': ['relations.html', 'searchbox.html']}
htmlhelp_basename = 'naht-mat'

man_pages = [(master_doc, 'naht-mat', 'naht-mat Documentation', [author], 1)]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
    'pandas': ('https://pandas.pydata.org/pandas-docs/stable', None),
    'h5py': ('https://docs.h5py.org/en/stable/', None),
}
