# normact documentation build configuration file.
#
# Only the settings that differ from the sphinx defaults are listed.

import os
import sys

project_root = os.path.abspath("../../")
sys.path.insert(0, project_root)

import normact  # noqa: E402

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.viewcode",
    "sphinx.ext.mathjax",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

project = "normact"
copyright = "The normact developers"
version = normact.__version__
release = normact.__version__

exclude_patterns = ["_build", "build"]
pygments_style = "sphinx"

napoleon_numpy_docstring = True
napoleon_google_docstring = False
autodoc_member_order = "bysource"

html_theme = "sphinx_rtd_theme"
html_static_path = ["_static"]
htmlhelp_basename = "normactdoc"

latex_documents = [
    ("index", "normact.tex", "normact Documentation", "The normact developers", "manual"),
]

man_pages = [("index", "normact", "normact Documentation", ["The normact developers"], 1)]
