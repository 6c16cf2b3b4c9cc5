"""Task generators and file formats: copy layout, IDX io, the image
pipeline, and the synthetic digit corpus."""

import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigseq import tasks


def decode_slots(one_hot, vocab=tasks.COPY_VOCAB):
    b, t, f = one_hot.shape
    return one_hot.reshape(b, t, f // vocab, vocab).argmax(axis=3)


def test_copy_layout_by_hand():
    # three digit steps, three blanks, one go, three answers
    batch = tasks.gen_copy_batch(np.random.default_rng(0), 2, 1, 3, 3)
    b, total, f = batch.inputs.shape
    assert (b, total, f) == (2, 10, 12)
    symbols = decode_slots(batch.inputs)
    digits = symbols[:, :3]
    assert np.all(digits < 10)
    assert np.all(symbols[:, 3:6] == tasks.COPY_BLANK)
    assert np.all(symbols[:, 6] == tasks.COPY_GO)
    assert np.all(symbols[:, 7:] == tasks.COPY_BLANK)  # blank input while answering
    assert np.all(batch.targets[:, 7:] == digits)
    assert np.all(batch.targets[:, :7] == -1)
    assert not batch.mask[:, :7].any()
    assert batch.mask[:, 7:].all()
    # every step is exactly one-hot per slot
    assert np.all(batch.inputs.reshape(2, 10, 1, 12).sum(axis=3) == 1.0)


def test_copy_layout_multi_digit():
    batch = tasks.gen_copy_batch(np.random.default_rng(1), 3, 4, 2, 5)
    assert batch.inputs.shape == (3, 2 + 5 + 1 + 2, 4 * 12)
    symbols = decode_slots(batch.inputs)
    assert np.all(symbols[:, 2 + 5] == tasks.COPY_GO)
    assert np.all(batch.targets[:, -2:] == symbols[:, :2])
    assert batch.mask.sum() == 3 * 2 * 4


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=1, max_value=3),
    st.integers(min_value=1, max_value=5),
    st.integers(min_value=0, max_value=6),
    st.integers(min_value=1, max_value=4),
)
def test_copy_mask_targets_aligned(n_digits, seq_len, blanks, batch_size):
    batch = tasks.gen_copy_batch(
        np.random.default_rng(42), batch_size, n_digits, seq_len, blanks
    )
    total = seq_len + blanks + 1 + seq_len
    assert batch.inputs.shape == (batch_size, total, n_digits * 12)
    assert np.array_equal(batch.mask, batch.targets >= 0)
    assert batch.mask.sum() == batch_size * seq_len * n_digits
    symbols = decode_slots(batch.inputs)
    assert np.array_equal(batch.targets[:, seq_len + blanks + 1 :], symbols[:, :seq_len])


def test_copy_digits_uniform_chi_square():
    batch = tasks.gen_copy_batch(np.random.default_rng(7), 64, 2, 20, 0)
    digits = decode_slots(batch.inputs)[:, :20].reshape(-1)
    counts = np.bincount(digits, minlength=10)
    n = digits.size
    chi2 = float((((counts - n / 10.0) ** 2) / (n / 10.0)).sum())
    # df=9; 27.88 is the 0.1% tail
    assert chi2 < 27.88, (chi2, counts)


def test_copy_task_wrapper():
    task = tasks.CopyTask(2, 10, 50)
    assert task.input_dim == 24 and task.out_slots == 2 and task.out_classes == 10
    longer = task.with_blanks(200)
    assert longer.blanks == 200 and longer.seq_len == 10
    batch = longer.sample(np.random.default_rng(0), 4)
    assert batch.inputs.shape[1] == 10 + 200 + 1 + 10


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    images = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
    labels = rng.integers(0, 10, size=5).astype(np.uint8)
    ip, lp = tmp_path / "imgs", tmp_path / "labels"
    tasks.save_idx_images(ip, images)
    tasks.save_idx_labels(lp, labels)
    li, ll = tasks.load_image_dataset(ip, lp)
    assert np.array_equal(li, images) and np.array_equal(ll, labels)


def test_idx_golden_bytes(tmp_path):
    images = np.arange(6, dtype=np.uint8).reshape(1, 2, 3)
    path = tmp_path / "one"
    tasks.save_idx_images(path, images)
    data = path.read_bytes()
    assert data == struct.pack(">iiii", 0x803, 1, 2, 3) + bytes(range(6))
    labels = np.array([7, 1], dtype=np.uint8)
    lpath = tmp_path / "two"
    tasks.save_idx_labels(lpath, labels)
    assert lpath.read_bytes() == struct.pack(">ii", 0x801, 2) + b"\x07\x01"


def test_idx_gzip_load(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    plain = tmp_path / "plain"
    tasks.save_idx_images(plain, images)
    gz = tmp_path / "imgs.gz"
    gz.write_bytes(gzip.compress(plain.read_bytes()))
    assert np.array_equal(tasks.load_idx_images(gz), images)


def test_idx_errors(tmp_path):
    bad_magic = tmp_path / "bad"
    bad_magic.write_bytes(struct.pack(">iiii", 0x999, 1, 1, 1) + b"\x00")
    with pytest.raises(ValueError, match="bad idx image magic"):
        tasks.load_idx_images(bad_magic)
    with pytest.raises(ValueError, match="bad idx label magic"):
        tasks.load_idx_labels(bad_magic)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">iiii", 0x803, 2, 2, 2) + b"\x00" * 3)
    with pytest.raises(ValueError, match="truncated idx image"):
        tasks.load_idx_images(short)
    tiny = tmp_path / "tiny"
    tiny.write_bytes(b"\x00\x00")
    with pytest.raises(ValueError, match="truncated"):
        tasks.load_idx_images(tiny)
    imgs = tmp_path / "imgs"
    labels = tmp_path / "labels"
    tasks.save_idx_images(imgs, np.zeros((3, 2, 2), dtype=np.uint8))
    tasks.save_idx_labels(labels, np.zeros(2, dtype=np.uint8))
    with pytest.raises(ValueError, match="count mismatch"):
        tasks.load_image_dataset(imgs, labels)


def test_resize_nearest_matches_index_map_oracle():
    rng = np.random.default_rng(3)
    images = rng.integers(0, 256, size=(2, 28, 28)).astype(np.uint8)
    for side in (14, 19, 28, 5):
        out = tasks.resize_nearest(images, side)
        assert out.shape == (2, side, side)
        for i in range(side):
            for j in range(side):
                assert np.all(
                    out[:, i, j] == images[:, (i * 28) // side, (j * 28) // side]
                )
    assert np.array_equal(tasks.resize_nearest(images, 28), images)


def test_binarize_threshold_edges():
    img = np.array([[[126, 127, 128, 255, 0]]], dtype=np.uint8)
    assert np.array_equal(tasks.binarize(img)[0, 0], [0, 0, 1, 1, 0])


def test_pixel_sequence_scan_line_order():
    img = np.arange(9).reshape(1, 3, 3) % 2
    seq = tasks.to_pixel_sequences(img.astype(np.uint8))
    assert seq.shape == (1, 9)
    for i in range(3):
        for j in range(3):
            assert seq[0, i * 3 + j] == img[0, i, j]


def test_make_image_batch_scores_only_last_step():
    seqs = np.zeros((3, 6), dtype=np.int64)
    labels = np.array([4, 1, 9])
    batch = tasks.make_image_batch(seqs, labels)
    assert batch.mask.sum() == 3
    assert batch.mask[:, -1, 0].all()
    assert np.array_equal(batch.targets[:, -1, 0], labels)
    assert np.all(batch.targets[:, :-1] == -1)


def test_synth_corpus_properties():
    images, labels = tasks.synth_digit_images(30, seed=5)
    assert images.shape == (30, 28, 28) and images.dtype == np.uint8
    assert labels.shape == (30,) and set(np.unique(labels)) <= set(range(10))
    # every rendered digit has ink and is not saturated
    ink = (images > 127).mean(axis=(1, 2))
    assert np.all(ink > 0.02) and np.all(ink < 0.6)
    again, again_labels = tasks.synth_digit_images(30, seed=5)
    assert np.array_equal(images, again) and np.array_equal(labels, again_labels)
    other, _ = tasks.synth_digit_images(30, seed=6)
    assert not np.array_equal(images, other)


def test_ensure_image_data_caches_idx(tmp_path):
    a_imgs, a_labels = tasks.ensure_image_data(tmp_path, "train", 12, seed=1)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert any("idx3" in f for f in files) and any("idx1" in f for f in files)
    b_imgs, b_labels = tasks.ensure_image_data(tmp_path, "train", 12, seed=1)
    assert np.array_equal(a_imgs, b_imgs) and np.array_equal(a_labels, b_labels)
    t_imgs, _ = tasks.ensure_image_data(tmp_path, "test", 8, seed=1)
    assert t_imgs.shape == (8, 28, 28)
    assert not np.array_equal(a_imgs[:8], t_imgs)


def test_ensure_image_data_prefers_real_files(tmp_path):
    images = np.full((4, 28, 28), 200, dtype=np.uint8)
    labels = np.array([1, 2, 3, 4], dtype=np.uint8)
    tasks.save_idx_images(tmp_path / "train-images-idx3-ubyte", images)
    tasks.save_idx_labels(tmp_path / "train-labels-idx1-ubyte", labels)
    got_i, got_l = tasks.ensure_image_data(tmp_path, "train", 3, seed=0)
    assert np.array_equal(got_i, images[:3]) and np.array_equal(got_l, labels[:3])


def test_image_task_batching():
    rng = np.random.default_rng(8)
    images = rng.integers(0, 256, size=(10, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, size=10).astype(np.uint8)
    task = tasks.ImageTask(images, labels, side=7)
    assert task.sequences.shape == (10, 49)
    assert set(np.unique(task.sequences)) <= {0, 1}
    batch = task.sample(np.random.default_rng(0), 4)
    assert batch.inputs.shape == (4, 49)
    ordered = task.ordered_batches(4)
    assert [b.inputs.shape[0] for b in ordered] == [4, 4, 2]
    limited = task.ordered_batches(4, limit=6)
    assert [b.inputs.shape[0] for b in limited] == [4, 2]
    assert np.array_equal(ordered[0].targets[:, -1, 0], task.labels[:4])


def test_copy_batch_seed_reproducibility():
    a = tasks.gen_copy_batch(np.random.default_rng(33), 4, 2, 5, 3)
    b = tasks.gen_copy_batch(np.random.default_rng(33), 4, 2, 5, 3)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.targets, b.targets)
    c = tasks.gen_copy_batch(np.random.default_rng(34), 4, 2, 5, 3)
    assert not np.array_equal(a.inputs, c.inputs)


def test_copy_chance_accuracy_is_ten_percent():
    rng = np.random.default_rng(0)
    slots = 100_000
    targets = rng.integers(0, 10, size=slots)
    guesses = rng.integers(0, 10, size=slots)
    accuracy = float((targets == guesses).mean())
    assert abs(accuracy - 0.10) < 0.01


def test_binarize_saturating_threshold():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(1, 4, 4)).astype(np.uint8)
    assert not tasks.binarize(img, threshold=255).any()
    assert tasks.binarize(np.zeros((1, 3, 3), dtype=np.uint8)).sum() == 0


def test_resize_chain_matches_composed_index_map():
    rng = np.random.default_rng(5)
    images = rng.integers(0, 256, size=(2, 28, 28)).astype(np.uint8)
    chained = tasks.resize_nearest(tasks.resize_nearest(images, 14), 24)
    for i in range(24):
        for j in range(24):
            si, sj = ((i * 14) // 24, (j * 14) // 24)
            oi, oj = ((si * 28) // 14, (sj * 28) // 14)
            assert np.all(chained[:, i, j] == images[:, oi, oj])
