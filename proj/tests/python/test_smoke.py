import json
import os
import struct

import numpy as np
import pytest

import faithscope as fs

COLORS = ["red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray"]


@pytest.fixture(scope="module")
def rigged():
    return fs.make_toy_model(7, rig=fs.BiasRig("green", context_tokens=COLORS))


def write_fptl(path, tensors, meta):
    """Independent FPTL v1 writer: magic, u64 header length, JSON header, raw f32 payload."""
    header = {"__metadata__": meta}
    payload = b""
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        header[name] = {"shape": list(arr.shape), "dtype": "f32", "offset": len(payload)}
        payload += arr.tobytes()
    text = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(b"FPTL0001" + struct.pack("<Q", len(text)) + text + payload)


def test_numpy_written_file_loads_and_runs(tmp_path):
    rng = np.random.default_rng(0)
    vocab, d, seq = 3, 4, 4
    tensors = {
        "output_bias": rng.normal(size=vocab),
        "unembedding": rng.normal(size=(vocab, d)),
        "position_embedding": rng.normal(size=(seq, d)),
        "token_embedding": rng.normal(size=(vocab, d)),
    }
    meta = {"format": "FPTL v1", "n_layers": "0", "d_model": str(d), "n_heads": "1", "d_ff": "4",
            "vocab_size": str(vocab), "max_seq": str(seq), "norm_eps": "1e-05", "final_norm": "false",
            "tokenizer_mode": "word"}
    write_fptl(tmp_path / "model.fptl", tensors, meta)
    (tmp_path / "vocab.json").write_text(json.dumps({"<x>": 0, "a": 1, "b": 2}))

    bundle = fs.load_bundle(str(tmp_path))
    assert bundle.config.vocab_size == vocab
    tokens = bundle.tokenizer.encode("a b")
    assert tokens == [1, 2]
    out = fs.forward(bundle, tokens)
    f32 = {k: v.astype(np.float32).astype(np.float64) for k, v in tensors.items()}
    h = f32["token_embedding"][tokens] + f32["position_embedding"][: len(tokens)]
    expected = h @ f32["unembedding"].T + f32["output_bias"]
    np.testing.assert_allclose(out["logits"], expected, atol=1e-12)


def test_bad_magic_raises(tmp_path):
    (tmp_path / "model.fptl").write_bytes(b"NOTFPTL!" + b"\0" * 16)
    (tmp_path / "vocab.json").write_text("{}")
    with pytest.raises(fs.Error, match="BadMagic"):
        fs.load_bundle(str(tmp_path))


def test_bundle_round_trip(tmp_path, rigged):
    fs.save_bundle(rigged, str(tmp_path / "m"))
    assert fs.load_bundle(str(tmp_path / "m")) == rigged


def test_forward_shapes_and_self_patch(rigged):
    tokens = rigged.tokenizer.encode("Here is an purple broccoli.")
    out = fs.forward(rigged, tokens)
    cfg = rigged.config
    assert out["hidden"].shape == (cfg.n_layers + 1, len(tokens), cfg.d_model)
    assert out["logits"].shape == (len(tokens), cfg.vocab_size)
    patched = fs.forward(rigged, tokens, [(2, 3, out["hidden"][2, 3].tolist())])
    assert np.array_equal(patched["logits"], out["logits"])


def test_recalibration_hand_case():
    p = fs.recalibrate([2.0, 1.0], [3.0, 0.0], 1.0)
    np.testing.assert_allclose(p, [0.2689414213699951, 0.7310585786300049], atol=1e-12)
    lhs, rhs = fs.log_odds_decomposition([0.0, 1.0], [0.0, 4.0], 0.5, 0, 1)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert fs.flip_threshold([0.0, 1.0], [0.0, 4.0], 0, 1) == pytest.approx(1 / 3)


def test_rigged_decode_flips(rigged):
    plan = fs.make_plan("Here is an purple broccoli.", "broccoli", 1, "The color of {x} is", 1, rigged)
    cfg = fs.BalorConfig()
    cfg.max_new_tokens = 1
    cfg.precision = "f64"
    assert fs.decode(plan, rigged, cfg, vanilla=True)["text"] == "green"
    assert fs.decode(plan, rigged, cfg)["text"] == "purple"


def test_dataset_and_evaluation(rigged):
    data_dir = os.environ.get("FAITHSCOPE_DATA", os.path.join(os.path.dirname(__file__), "..", "..", "data"))
    docs = []
    corpus = os.path.join(data_dir, "corpus", "mini")
    for name in sorted(os.listdir(corpus)):
        with open(os.path.join(corpus, name), encoding="utf-8") as f:
            docs.append(f.read())
    with open(os.path.join(data_dir, "lexicons", "color_nouns.json")) as f:
        nouns = json.load(f)
    counts = fs.scan_corpus(docs, nouns, COLORS)
    points = fs.render_prompts(fs.assign_attributes(counts))
    assert all(p.target_prompt.startswith("The color of {x} is ") for p in points)
    biased, nonbiased = fs.bias_split(points, rigged)
    assert len(biased) + len(nonbiased) == len(points)
    assert biased
    vanilla = fs.compute_sr(fs.run_method(biased, rigged, "vanilla", layer=1))
    balor = fs.compute_sr(fs.run_method(biased, rigged, "balor_s", alpha=1.0, layer=1))
    assert balor > vanilla
    scan = fs.scan_layers(points, nonbiased, rigged, layer_min=1, layer_max=3)
    assert 1 <= scan["chosen_layer"] <= 3


def test_stats_submodule():
    assert fs.stats.spearman([1, 2, 3, 4, 5], [5, 2, 4, 1, 3])["rho"] == pytest.approx(-0.5)
    assert fs.stats.isotonic([3, 1, 2])["fitted"] == [2, 2, 2]
    assert fs.stats.kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])["h"] == pytest.approx(7.2)
    assert fs.stats.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_layer_selection_hand_case():
    layer, combined = fs.select_layer([0.2, 0.8, 0.5], [0.1, 0.3, 0.5], 0.8)
    assert layer == 1
    assert combined == pytest.approx([0.0, 0.9, 0.6])


def test_cli_in_process(tmp_path):
    assert fs.run_cli(["gen-toy", "--seed", "3", "--out-dir", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "model.fptl").exists()
    assert fs.run_cli(["does-not-exist"]) == 2
