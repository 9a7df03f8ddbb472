import pytest

from bagrank.metadatabase import MetadataStore, build_metadatabase

import suitegen


@pytest.fixture(scope="session")
def toy_store(tmp_path_factory):
    """Metadatabase over the 3-dataset toy corpus, built once per session."""
    root = tmp_path_factory.mktemp("toystore") / "store"
    build_metadatabase(suitegen.toy_corpus(), str(root), seed=11, k_folds=4)
    return MetadataStore(str(root))
