#!/usr/bin/env python3

# Copyright 2024 The birgat developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#

from setuptools import find_packages, setup

setup(
    name="birgat",
    version="0.1.0",
    description="Multi-intent spoken language understanding with a dual "
    "relational graph attention encoder and a pointer-generator decoder",
    license="Apache 2.0",
    classifiers=[
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
    packages=find_packages(
        where=".",
        include=["birgat*"],
    ),
    include_package_data=True,
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "networkx>=2.8",
        "pyyaml>=6.0",
        "tqdm>=4.62",
        "typing_extensions>=4.0",
    ],
    extras_require={
        "plot": ["pandas", "seaborn", "matplotlib"],
        "test": ["pytest>=7"],
    },
    entry_points={
        "console_scripts": ["birgat=birgat.cli:main"],
    },
    zip_safe=False,
)
