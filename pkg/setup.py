from setuptools import setup, find_packages

setup(
    name="spamlab",
    version="0.1.0",
    description="卷积与自注意力的图谱分析及 SPAM 混合器参考实现",
    author="SpamLab Developers",
    author_email="spamlab@example.com",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "click>=8.0.0",
        "pandas>=1.5.0",
        "numpy>=1.21.0",
        "scipy>=1.8.0",
        "tqdm>=4.64.0",
        "pyyaml>=6.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0"],
    },
    entry_points={
        "console_scripts": [
            "spamlab=spamlab.cli:main",
        ],
    },
    python_requires=">=3.8",
)
