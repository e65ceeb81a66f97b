from setuptools import setup, find_packages

setup(
    name='convexflow',
    description="Optimal transport maps by constrained gradient flows over input convex neural networks.",
    long_description="Optimal transport maps by constrained gradient flows over input convex neural networks.",
    version='0.1.0',
    license="Apache Public License 2.0",
    author='The convexflow authors',
    packages=find_packages(exclude=['tests']),
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8'
    ],
    entry_points={
        'console_scripts': ['convexflow=convexflow.cli:main'],
    },
    python_requires=">=3.8",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: Apache Software License",
        "Topic :: Scientific/Engineering :: Mathematics",
    ]
)
