from setuptools import setup


VERSION = "0.1.0a1"
GITHUB = "https://github.com/fewseg/fewseg"
DOCUMENTATION = "https://fewseg.readthedocs.io"
LICENSE = "MIT"
PACKAGES = [
    "fewseg",
    "fewseg.internal",
    "fewseg.types",
]

with open("README.md", "r", encoding="utf-8") as f:
    LONG_DESCRIPTION = f.read()

with open("requirements.txt", "r") as f:
    REQUIREMENTS = [line.strip() for line in f if line.strip()]

EXTRA_REQUIREMENTS = {
    'speed': [
        'ujson',
    ],
    'docs': [
        'sphinx==4.2.0',
        'furo==2022.6.21',
    ],
}

setup(
    name="fewseg",
    author="fewseg developers",
    version=VERSION,
    license=LICENSE,
    url=GITHUB,
    project_urls={
        "Documentation": DOCUMENTATION,
        "Issue tracker": GITHUB + "/issues",
    },
    description='Few-shot semantic segmentation by dense comparison and iterative refinement.',
    long_description=LONG_DESCRIPTION,
    long_description_content_type="text/markdown",
    include_package_data=True,
    install_requires=REQUIREMENTS,
    extras_require=EXTRA_REQUIREMENTS,
    packages=PACKAGES,
    entry_points={
        'console_scripts': [
            'fewseg=fewseg.cli:main',
        ],
    },
    python_requires='>=3.8.0',
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'License :: OSI Approved :: MIT License',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'Topic :: Software Development :: Libraries :: Python Modules',
        'Typing :: Typed',
    ]
)
