import numpy as np
import pytest

from ddxt.dataset import SyntheticConfig, build_vocabularies, generate_synthetic, tokenize_records
from ddxt.model import ModelConfig, init_params

from helpers import ACCEPTANCE_RESULTS


@pytest.fixture(scope="session")
def records():
    return generate_synthetic(SyntheticConfig(n_pathologies=6, n_evidence_codes=12, n_records=48, seed=3))


@pytest.fixture(scope="session")
def vocabs(records):
    return build_vocabularies(records)


@pytest.fixture(scope="session")
def tiny_cfg(vocabs):
    enc, dec = vocabs
    return ModelConfig.for_vocabs(len(enc), len(dec), d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                                  max_enc_len=24, max_dec_len=10)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=0)


@pytest.fixture(scope="session")
def tokenized(records, vocabs, tiny_cfg):
    enc, dec = vocabs
    return tokenize_records(records, enc, dec, tiny_cfg.max_enc_len, tiny_cfg.max_dec_len)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
