from setuptools import setup, find_packages

setup(
    name="deep_rtc",
    version="0.1.0",
    packages=find_packages(exclude=("tests", "tests.*")),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "networkx>=3.1",
        "python-dotenv==1.0.1",
        "pyyaml==6.0.1",
    ],
    extras_require={
        "test": [
            "pytest==7.4.3",
            "pytest-html==4.1.1",
            "allure-pytest==2.13.2",
            "allure-python-commons==2.13.2",
        ],
    },
    entry_points={
        "console_scripts": ["deep-rtc=deep_rtc.cli:main"],
    },
    python_requires=">=3.8",
)
