"""
Setup script for the Temporal Audio-Text Lab
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="temporal-audio-text-lab",
    version="1.0.0",
    description="Temporal contrastive post-training and zero-shot evaluation of audio-text embeddings",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["examples", "examples.*"]),
    py_modules=["main"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.24.3",
        "scipy>=1.11.4",
        "soundfile>=0.12.1",
        "torch>=2.0.1",
        "pandas>=2.0.3",
        "python-dotenv>=1.0.0",
        "pyyaml>=6.0.1",
    ],
    extras_require={
        "test": ["pytest>=7.4.3"],
    },
    entry_points={
        'console_scripts': [
            'temporal-lab=main:main',
        ],
    },
)
