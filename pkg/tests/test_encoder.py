import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import gradient_check
from rcnas.corpus import RelationStatement, generate_synthetic
from rcnas.encoder import (
    Encoder,
    EncoderConfig,
    TokenVocabulary,
    build_vocab,
    encode,
    load_encoder,
    pad_batch,
    save_encoder,
)
from rcnas.preprocess import E1_START, UNK, positional_ids, transform

KITCHEN = RelationStatement(("the", "kitchen", "is", "part", "of", "the", "house"), (1, 2), (6, 7), "r")
SHORT = RelationStatement(("a", "b", "c", "d", "e"), (0, 1), (3, 4), "r")


def test_vocab_bytes_and_unknowns(tmp_path):
    split = generate_synthetic(3, 50, 5, 5, seed=1)
    a, b = build_vocab(split.train), build_vocab(split.train)
    assert a.to_text() == b.to_text()
    assert a.id("never-seen") == a.id(UNK)
    assert E1_START in a.ids
    a.save(tmp_path / "vocab.txt")
    assert TokenVocabulary.load(tmp_path / "vocab.txt") == a
    with pytest.raises(ValueError):
        build_vocab([])


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(hidden_dim=10, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(pos_emb_dim_concat=8)
    assert EncoderConfig().widths == (128, 140)


def test_encode_shapes():
    vocab = build_vocab([KITCHEN, SHORT])
    enc = Encoder(EncoderConfig(dropout=0.0), len(vocab)).eval()
    batch = [transform(KITCHEN, "entity_markers"), transform(SHORT, "entity_tokens")]
    assert [len(t) for t in batch] == [13, 7]
    hidden, mask = encode(batch, "null", None, enc, vocab)
    assert hidden.shape == (2, 13, 128)
    assert mask.sum(dim=1).tolist() == [13, 7]
    ids = [positional_ids(t) for t in batch]
    hidden, _ = encode(batch, "concat_to_output", ids, enc, vocab)
    assert hidden.shape[-1] == 140
    with pytest.raises(ValueError):
        encode(batch, "add_to_embedding", None, enc, vocab)
    with pytest.raises(ValueError):
        encode(batch, "null", ids, enc, vocab)


def _random_batch(lengths, vocab_size, seed):
    g = torch.Generator().manual_seed(seed)
    seqs = [torch.randint(1, vocab_size, (n,), generator=g).tolist() for n in lengths]
    pos = [torch.randint(0, 3, (n,), generator=g).tolist() for n in lengths]
    return seqs, pos


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=1, max_size=4), st.integers(1, 10),
       st.sampled_from(["null", "add_to_embedding", "concat_to_output"]), st.integers(0, 1000))
def test_padding_invariance(lengths, extra, pos_mode, seed):
    torch.manual_seed(0)
    cfg = EncoderConfig(hidden_dim=32, layers=2, heads=4, ffn_dim=64, max_len=64, dropout=0.1)
    enc = Encoder(cfg, 30).eval()
    seqs, pos = _random_batch(lengths, 30, seed)
    ids, mask = pad_batch(seqs)
    ent, _ = pad_batch(pos)
    L = ids.shape[1]
    ids2 = torch.cat([ids, torch.zeros(len(seqs), extra, dtype=torch.long)], 1)
    mask2 = torch.cat([mask, torch.zeros(len(seqs), extra, dtype=torch.bool)], 1)
    ent2 = torch.cat([ent, torch.zeros(len(seqs), extra, dtype=torch.long)], 1)
    with torch.no_grad():
        h1 = enc(ids, mask, pos_mode, ent)
        h2 = enc(ids2, mask2, pos_mode, ent2)
    assert torch.allclose(h1[mask], h2[:, :L][mask], atol=1e-5)
    assert torch.all(h2[~mask2] == 0)


def test_deterministic_without_dropout():
    torch.manual_seed(0)
    enc = Encoder(EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32, dropout=0.0), 20)
    seqs, _ = _random_batch([5, 7], 20, 1)
    ids, mask = pad_batch(seqs)
    assert torch.equal(enc(ids, mask), enc(ids, mask))


def test_zero_add_table_equals_null():
    torch.manual_seed(0)
    enc = Encoder(EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32, dropout=0.0), 20).eval()
    seqs, pos = _random_batch([6, 4], 20, 2)
    ids, mask = pad_batch(seqs)
    ent, _ = pad_batch(pos)
    with torch.no_grad():
        enc.ent_add.weight.zero_()
        assert torch.equal(enc(ids, mask, "add_to_embedding", ent), enc(ids, mask, "null"))


def test_entity_tables_init_range():
    torch.manual_seed(0)
    enc = Encoder(EncoderConfig(), 20)
    assert enc.ent_concat.weight.shape == (3, 12)
    for table in (enc.ent_add.weight, enc.ent_concat.weight):
        assert table.abs().max() <= 0.02


def test_parameters_for_excludes_unused_tables():
    enc = Encoder(EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32), 20)
    ids = {id(p) for p in enc.parameters_for("null")}
    assert id(enc.ent_add.weight) not in ids and id(enc.ent_concat.weight) not in ids
    assert id(enc.ent_concat.weight) in {id(p) for p in enc.parameters_for("concat_to_output")}


class _EncoderCall(torch.nn.Module):
    def __init__(self, enc, ids, mask, pos_mode, ent):
        super().__init__()
        self.enc, self.args = enc, (ids, mask, pos_mode, ent)

    def forward(self):
        return self.enc(*self.args)


@pytest.mark.parametrize("pos_mode", ["null", "add_to_embedding", "concat_to_output"])
def test_encoder_gradient_check(pos_mode):
    torch.manual_seed(0)
    cfg = EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32, max_len=16, dropout=0.0)
    enc = Encoder(cfg, 12).double().eval()
    seqs, pos = _random_batch([6, 4], 12, 3)
    ids, mask = pad_batch(seqs)
    ent, _ = pad_batch(pos)
    call = _EncoderCall(enc, ids, mask, pos_mode, ent)
    weight = torch.randn(2, ids.shape[1], cfg.output_width(pos_mode), dtype=torch.float64)
    params = [(n, p) for n, p in call.named_parameters()
              if not ((n.endswith("ent_add.weight") and pos_mode != "add_to_embedding")
                      or (n.endswith("ent_concat.weight") and pos_mode != "concat_to_output"))]
    err = gradient_check(call, lambda h: (h * weight).sum(), params)
    assert err <= 1e-3


def test_save_load_round_trip(tmp_path):
    torch.manual_seed(0)
    enc = Encoder(EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32), 20)
    save_encoder(enc, tmp_path / "enc.safetensors")
    back = load_encoder(tmp_path / "enc.safetensors")
    assert back.cfg == enc.cfg
    for (n, a), (_, b) in zip(enc.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), n
