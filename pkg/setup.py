# Standard library imports
import setuptools

# Third party imports

# Local application imports

setuptools.setup(
    name="combinatorial-recommender",
    version="0.1",
    description="Combinatorial slate recommendation: list evaluator, set-to-policy generator and bootstrap simulator",
    packages=setuptools.find_packages(),
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    include_package_data=True,
    install_requires=[
        "numpy",
        "msgpack",
        "pandas",
    ],
    extras_require={
        "dev": ["pylint"],
    },
    entry_points={
        "console_scripts": [
            "combinatorial-recommender=combinatorial_recommender.cli:main",
        ],
    },
)
