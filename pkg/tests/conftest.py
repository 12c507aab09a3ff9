"""Shared fixtures: domain parameters and a trained skill library.

Training all five skills takes a few minutes, so the library is cached on
disk keyed by the domain file contents.  Training is deterministic, which
makes the cached bytes identical to a fresh run; delete the directory (or
point ``LSPKIT_TEST_LIBRARY`` elsewhere) to force a retrain.
"""

import hashlib
import os
from pathlib import Path

import pytest

from lspkit.skills import default_domain_path, load_domain_params
from lspkit.value_learning import load_library, save_library, train_library

SKILLS = ("pick", "pivot", "place", "pull", "push")


def library_cache_dir() -> Path:
    override = os.environ.get("LSPKIT_TEST_LIBRARY")
    if override:
        return Path(override)
    digest = hashlib.sha256(default_domain_path().read_bytes()).hexdigest()[:12]
    return Path("/tmp") / f"lspkit-test-library-{digest}"


@pytest.fixture(scope="session")
def domain_params():
    return load_domain_params()


@pytest.fixture(scope="session")
def library_dir(domain_params) -> Path:
    cache = library_cache_dir()
    if not all((cache / f"{skill}.tt").exists() for skill in SKILLS):
        lib = train_library(domain_params, SKILLS, seed=0)
        save_library(cache, lib)
    return cache


@pytest.fixture(scope="session")
def trained_library(domain_params, library_dir):
    return load_library(library_dir, domain_params)
