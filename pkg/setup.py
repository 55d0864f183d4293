import os
from setuptools import setup


# Read long description from readme
with open("README.md", "r", encoding="utf-8") as fh:
    LONG_DESCRIPTION = fh.read()


# Get tag from Github environment variables
TAG = os.environ['GITHUB_TAG'] if 'GITHUB_TAG' in os.environ else "0.0.0"


setup(
    name="mixvstat",
    version=TAG,
    description="Separable kernel expansions, concentration bounds and tests for V-statistics of mixing sequences.",
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    packages=['mixvstat'],
    python_requires='>=3.11',
    install_requires=[
        'numpy>=1.24,<2',
        'tqdm>=4.62,<5',
        'scipy==1.11.*',
        'gitpython==3.1.*',
        'ligo-segments==1.4.*',
    ],
    extras_require={
        'test': ['pytest>=7'],
    },
    entry_points={
        'console_scripts': ['mixvstat=mixvstat.cli:main'],
    },
    license='MIT',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    keywords='v-statistics, u-statistics, mixing, concentration, random-fourier-features, independence-test, lasso',
    test_suite="pytest",
)
