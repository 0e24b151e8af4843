from setuptools import setup, find_packages

setup(
    name="hyperhash",
    version="1.0.0",
    description="Spatially aware image retrieval with hyperdimensional scene encoding and trainable hyperplane hashing",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Information Analysis",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.23.0",
        "scipy>=1.9.0",
        "tqdm>=4.64.0",
        "joblib>=1.2.0",
        "cachetools>=5.0.0",
        "appdirs>=1.4.4",
        "python-dotenv>=0.21.0",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "hyperhash=hyperhash.main:main",
        ],
    },
    include_package_data=True,
)
