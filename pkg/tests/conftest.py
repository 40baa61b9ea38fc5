import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_run():
    """A quickly trained One-mode model on a small planted cohort."""
    from talentpred import model as net
    from talentpred import pipeline as P
    from talentpred.data import all_awards, generate_synthetic
    from talentpred.encoders import TransformerConfig, Vocabulary

    students = generate_synthetic(240, 3)
    _, awards, _ = all_awards(students)
    vocab = Vocabulary.build(a.description for a in awards)
    tcfg = TransformerConfig(d_model=16, heads=2, ffn_width=32, layers=1)
    enc, _ = P.finetune_text_encoder([a.description for a in awards], [a.gold_type for a in awards],
                                     vocab, tcfg, P.FinetuneConfig(epochs=8), seed=3)
    schema = net.FeatureSchema.fit(students)
    batch, kept = P.prepare(students, 5, schema, vocab, tcfg, enc)
    y = P.gold_labels([students[i] for i in kept], 5)
    tr, te = P.stratified_split(y, 0.2, 3)
    cfg = net.ModelConfig(mode="one", transformer=tcfg)
    values, curves = P.train(batch.take(tr), y[tr], cfg, P.TrainConfig(epochs=30, batch_size=16, lr0=3e-2), schema, 3,
                             batch.take(te), y[te])
    bundle = net.ModelBundle(cfg, schema, values, enc, vocab, 5)
    return dict(students=students, vocab=vocab, tcfg=tcfg, enc=enc, schema=schema, batch=batch,
                kept=kept, y=y, tr=tr, te=te, cfg=cfg, values=values, curves=curves, bundle=bundle)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
