import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="esnet",
    version="0.1.0",
    description="Efficient stereo matching networks (ESNet / ESNet-M) on a numpy autodiff engine",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["test", "experiments"]),
    install_requires=[
        "numpy>=1.17",
        "pandas",
        "joblib",
        "Pillow",
        "matplotlib>=3.5",
    ],
    extras_require={
        "test": ["pytest"],
        "docs": ["sphinx", "sphinx-autoapi", "sphinx_rtd_theme"],
    },
    entry_points={
        "console_scripts": ["esnet=esnet.cli:main"],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.7',
)
