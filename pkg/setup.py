from setuptools import setup, find_packages

setup(
    name="gdt",
    version="0.1.0",
    author="Your Name",
    description="Group Diffusion Transformers: joint generation of correlated image groups",
    packages=find_packages(exclude=["tests"]),
    py_modules=["cli"],
    package_data={"gdt_libs": ["config.yaml"]},
    install_requires=[
        "numpy>=1.21",
        "pandas>=1.3",
        "scipy>=1.7",
        "Pillow>=9.0",
        "PyYAML>=5.4",
        "tqdm>=4.60",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "gdt = cli:main"
        ]
    },
    python_requires=">=3.8",
)
