import pytest

from wsisearch.synth import SyntheticSpec, generate


@pytest.fixture(scope="session")
def small_corpus():
    """Two sites, two subtypes each, well separated.  12 db + 4 query slides."""
    spec = SyntheticSpec(
        n_sites=2,
        subtypes_per_site=2,
        slides_per_subtype=3,
        patches_per_slide=30,
        dim=32,
        separation=2.0,
        sigma=0.2,
        queries_per_subtype=1,
        seed=7,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def small_db_slides(small_corpus):
    return small_corpus[0]


@pytest.fixture(scope="session")
def small_query_slides(small_corpus):
    return small_corpus[1]
