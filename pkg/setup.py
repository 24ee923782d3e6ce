"""copulapde setup.py."""

import os
import re
from setuptools import setup

PACKAGE_NAME = 'copulapde'

HERE = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(HERE, 'README.rst')) as fp:
    README = fp.read()
with open(os.path.join(HERE, PACKAGE_NAME, 'const.py')) as fp:
    VERSION = re.search("__version__ = '([^']+)'", fp.read()).group(1)


setup(name=PACKAGE_NAME,
      classifiers=['Intended Audience :: Financial and Insurance Industry',
                   'Intended Audience :: Science/Research',
                   'License :: OSI Approved :: BSD License',
                   'Operating System :: OS Independent',
                   'Programming Language :: Python',
                   'Programming Language :: Python :: 3',
                   'Topic :: Scientific/Engineering :: Mathematics'],
      description=('Risk-neutral PDE residuals of Gaussian copula '
                   'conditional portfolio probabilities'),
      entry_points={'console_scripts':
                    ['{0} = {0}:main'.format(PACKAGE_NAME)]},
      extras_require={'python': ['flake8 >= 2.2.5', 'pep257 >= 0.3.2']},
      install_requires=['docopt >= 0.6.2',
                        'numpy >= 1.17',
                        'pandas >= 1.0',
                        'python-dateutil >= 2.7.0',
                        'scipy >= 1.4'],
      keywords=['copula', 'risk-neutral', 'common cause', 'ito calculus',
                'portfolio'],
      license='Simplified BSD License',
      long_description=README,
      packages=[PACKAGE_NAME],
      python_requires='>=3.6',
      test_suite='test',
      tests_require=['mock >= 1.0.1'],
      version=VERSION)
