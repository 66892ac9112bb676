#!/usr/bin/env python
# encoding: utf8

import os
import re

from setuptools import setup

here = os.path.dirname(os.path.abspath(__file__))

# Figure out the version
version_re = re.compile(
    r'__version__ = (\(.*?\))')
fp = open(os.path.join(here, 'deerwatch/__init__.py'))
version = None
for line in fp:
    match = version_re.search(line)
    if match:
        exec("version = %s" % match.group(1))
        version = ".".join(map(str, version))
        break
else:
    raise Exception("Cannot find version in __init__.py")
fp.close()

setup(name='deerwatch',
      version=version,
      description="Nighttime deer detection, trajectory forecasting and "
                  "collision warning on synthetic driving sequences",
      classifiers=[
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python :: 3'
      ],
      license='BSD',
      packages=['deerwatch'],
      python_requires='>=3.8',
      install_requires=['pyyaml>=5.1', 'numpy>=1.20', 'scipy>=1.6',
                        'torch>=1.10', 'opencv-python-headless>=4.5'],
      extras_require={'test': ['pytest>=6']},
      entry_points="""[console_scripts]\ndeerwatch = deerwatch.script:run\n""",
      zip_safe=False,
)
