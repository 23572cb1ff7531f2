"""Smoke test for the `spancopy` extension module.

Build first:
    cargo build --release -p spancopy-python --features extension-module
then run:
    python3 python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys
import tempfile


def load_module():
    try:
        import spancopy

        return spancopy
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for profile in ("release", "debug"):
        lib = root / "target" / profile / "libspancopy.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("spancopy", str(lib))
            spec = importlib.util.spec_from_loader("spancopy", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("spancopy extension not found; build it with cargo first")


def main():
    sc = load_module()

    raw = sc.generate_corpus(seed=3, size=40, hallucination_rate=0.3)
    assert len(raw) == 40 and raw[0].id
    vocab = sc.Vocabulary.build(raw, max_size=2000)
    data = [sc.annotate(r, vocab) for r in raw]
    ex = data[0]
    assert ex.num_entities == len({e[3].lower() for e in ex.doc_entities})
    assert len(ex.copy_targets) > 0

    kept = sc.filter_corpus(data)
    assert 0 < len(kept) < len(data)
    assert sc.corpus_stats(kept)["src_p_gt"] == 100.0

    assert sc.rouge_n(["a", "b"], ["a", "b"], 1) == (1.0, 1.0, 1.0)
    assert sc.rouge_l(["a", "c", "b"], ["a", "b"])[1] == 1.0
    assert sc.extract_entities(["Alice", "Hartley", "visited", "Portsmouth"])[0][:3] == (0, 2, "PERSON")

    model = sc.SpanCopyModel(len(vocab), d_model=16, d_ff=16, use_gr=True, beta=0.3)
    out = model.forward(ex)
    width = len(vocab) + ex.num_entities
    for row in out["p_final"]:
        assert len(row) == width and abs(sum(row) - 1.0) < 1e-9
    assert model.grad_check(ex) < 1e-4

    trainer = sc.Trainer(model, learning_rate=0.1, batch_size=4)
    first = trainer.step(data)[0]
    for _ in range(30):
        last = trainer.step(data)[0]
    assert math.isfinite(last) and last < first, (first, last)

    trained = trainer.model()
    summary = trained.generate(ex, vocab, strategy="beam", beam_width=2)
    assert summary["label_trace"]
    scores = sc.evaluate(summary["tokens"], ex)
    assert 0.0 <= scores["rouge1"]["f1"] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "model.bin"
        trained.save(str(path))
        again = sc.SpanCopyModel.load(str(path))
        assert again.loss(ex) == trained.loss(ex)

    try:
        sc.SpanCopyModel(len(vocab), n_heads=3)
    except ValueError:
        pass
    else:
        raise AssertionError("bad head count accepted")

    print(f"smoke test passed: {len(kept)}/{len(data)} kept, loss {first:.3f} -> {last:.3f}")


if __name__ == "__main__":
    main()
