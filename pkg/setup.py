import re
from pathlib import Path

from setuptools import find_packages, setup


def search(substr: str, content: str):
    found = re.search(substr, content)
    if found:
        return found.group(1)
    return ""


with open("normact/__init__.py", encoding="utf8") as f:
    content = f.read()
    version = search(r'__version__ = "(.*?)"', content)
    author = search(r'__author__ = "(.*?)"', content)
    author_email = search(r'__email__ = "(.*?)"', content)


requirements = ["numpy>=1.20", "matplotlib", "click", "tqdm"]

test_requirements = ["pytest>=3.1"]

setup(
    name="normact",
    version=version,
    description="Normalized activation functions and variance-propagation analysis",
    long_description=Path("./README.rst").read_text(),
    long_description_content_type="text/x-rst",
    author=author,
    author_email=author_email,
    packages=find_packages(exclude=["examples", "examples.*"]),
    include_package_data=False,
    install_requires=requirements,
    license="BSD license",
    zip_safe=False,
    keywords=["neural networks", "activation functions", "normalization", "variance"],
    classifiers=[
        "Development Status :: 2 - Pre-Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: BSD License",
        "Natural Language :: English",
        "Programming Language :: Python :: 3",
    ],
    python_requires=">=3.8",
    test_suite="normact.tests",
    tests_require=test_requirements,
    extras_require={"test": test_requirements},
    entry_points={
        "console_scripts": [
            "normact = normact.cli:main",
        ],
    },
)
