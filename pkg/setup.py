from os import path
from setuptools import setup
import sys


# Fail early, with a readable message, on interpreters older than the
# minimum; the rest of this file may use newer syntax.
min_version = (3, 8)
if sys.version_info < min_version:
    sys.exit("naht-mat requires Python {}.{} or later; found {}.{}. An old pip "
             "can also cause this: pip install --upgrade pip".format(
                 *(min_version + sys.version_info[:2])))

here = path.abspath(path.dirname(__file__))

with open(path.join(here, 'README.md'), encoding='utf-8') as readme_file:
    readme = readme_file.read()

with open(path.join(here, 'requirements.txt')) as requirements_file:
    requirements = [line for line in requirements_file.read().splitlines()
                    if line and not line.startswith('#')]


setup(
    name='naht-mat',
    version='0.1.0',
    description="History-conditioned multi-agent transformer for N-agent "
                "ad hoc teamwork",
    long_description=readme,
    long_description_content_type='text/markdown',
    packages=['naht.mat', 'naht.mat.tests'],
    entry_points={'console_scripts': ['naht-mat = naht.mat.cli:main']},
    include_package_data=True,
    python_requires='>={}'.format('.'.join(str(n) for n in min_version)),
    install_requires=requirements,
    license="BSD (3-clause)",
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Natural Language :: English',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
)
