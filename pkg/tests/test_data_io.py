"""File format roundtrips, validation errors with positions, and properties
of the synthetic paired-embedding generator."""

import numpy as np
import pytest

from probemb.data_io import (
    CorrespondenceMap,
    EmbeddingStore,
    SynthConfig,
    expand_pairs,
    read_correspondences,
    read_embeddings,
    read_noise_table,
    synth_generate,
    write_correspondences,
    write_embeddings,
    write_noise_table,
)
from probemb.errors import DomainError, FormatError, ValidationError
from probemb.retrieval import spearman


def small_store(modality="image", n=3, d=4, seed=0):
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)
    ids = [f"{modality[0]}{i}" for i in range(n)]
    return EmbeddingStore(modality, ids, matrix).validate()


class TestEmbeddingFormat:
    def test_roundtrip_identity(self):
        store = small_store()
        back = read_embeddings(write_embeddings(store))
        assert back.modality == store.modality
        assert back.ids == store.ids
        assert np.array_equal(back.matrix, store.matrix)

    def test_bytes_roundtrip_bitwise(self):
        store = small_store(modality="text", n=5, d=7, seed=1)
        data = write_embeddings(store)
        assert write_embeddings(read_embeddings(data)) == data

    def test_unicode_ids(self):
        store = EmbeddingStore("image", ["héllo", "ウサギ"], np.zeros((2, 3), np.float32))
        back = read_embeddings(write_embeddings(store))
        assert back.ids == ["héllo", "ウサギ"]

    def test_bad_magic_offset_zero(self):
        data = b"NOTMAGIC" + write_embeddings(small_store())[8:]
        with pytest.raises(FormatError) as err:
            read_embeddings(data)
        assert err.value.offset == 0

    def test_truncated_matrix_names_offset(self):
        data = write_embeddings(small_store())
        cut = data[:-5]
        with pytest.raises(FormatError) as err:
            read_embeddings(cut)
        assert err.value.offset == len(cut)
        assert "matrix" in str(err.value)

    def test_trailing_garbage_rejected(self):
        data = write_embeddings(small_store()) + b"\x00"
        with pytest.raises(FormatError):
            read_embeddings(data)

    def test_nonfinite_value_offset(self):
        store = small_store()
        data = bytearray(write_embeddings(store))
        # Matrix starts after header (17) plus the three 2-byte-prefixed IDs.
        matrix_start = len(data) - store.n * store.d * 4
        data[matrix_start : matrix_start + 4] = np.array([np.inf], "<f4").tobytes()
        with pytest.raises(FormatError) as err:
            read_embeddings(bytes(data))
        assert err.value.offset == matrix_start

    def test_duplicate_ids_rejected(self):
        store = small_store()
        store.ids = ["a", "a", "b"]
        with pytest.raises(ValidationError):
            write_embeddings(store)


class TestCorrespondences:
    def test_many_to_many_expansion(self):
        images = small_store("image", n=2)
        captions = small_store("text", n=5)
        text = "".join(f"i{i}\tt{j}\n" for i in range(2) for j in range(5))
        cmap = read_correspondences(text, images, captions)
        assert len(cmap.edges) == 10

    def test_comments_and_blank_lines(self):
        images = small_store("image", n=1)
        captions = small_store("text", n=1)
        cmap = read_correspondences("# header\n\ni0\tt0\n", images, captions)
        assert cmap.edges == [("i0", "t0")]

    def test_unknown_caption_reports_line(self):
        images = small_store("image", n=2)
        captions = small_store("text", n=1)
        with pytest.raises(ValidationError) as err:
            read_correspondences("i0\tt0\ni1\tmissing\n", images, captions)
        assert err.value.line == 2

    def test_duplicate_edge_reports_line(self):
        images = small_store("image", n=1)
        captions = small_store("text", n=1)
        with pytest.raises(ValidationError) as err:
            read_correspondences("i0\tt0\ni0\tt0\n", images, captions)
        assert err.value.line == 2

    def test_empty_file_is_valid_empty_map(self):
        cmap = read_correspondences("# nothing\n", small_store("image"), small_store("text"))
        assert cmap.edges == []

    def test_writer_reader_roundtrip(self):
        images = small_store("image", n=2)
        captions = small_store("text", n=2)
        cmap = CorrespondenceMap([("i0", "t1"), ("i1", "t0")])
        text = write_correspondences(cmap)
        assert read_correspondences(text, images, captions).edges == cmap.edges


class TestNoiseTable:
    def test_roundtrip(self):
        noise = [("a", 0.123456789), ("b", 0.5)]
        table = read_noise_table(write_noise_table(noise))
        assert table == {"a": 0.123456789, "b": 0.5}

    def test_bad_header(self):
        with pytest.raises(ValidationError):
            read_noise_table("sigma,id\n")


class TestSynthGenerate:
    def test_degenerate_noise_collapses_concepts(self):
        cfg = SynthConfig(n_concepts=3, d=8, images_per_concept=4,
                          captions_per_concept=4, noise_low=0.0, noise_high=0.0,
                          cross_offset=0.0, seed=5)
        images, captions, cmap, noise = synth_generate(cfg)
        for c in range(3):
            block = images.matrix[c * 4 : (c + 1) * 4]
            assert np.all(block == block[0])
        sims = images.matrix @ images.matrix.T
        assert np.max(sims[:4, 4:]) < 1.0 - 1e-6

    def test_within_concept_closer_than_across(self):
        images, captions, cmap, _ = synth_generate(SynthConfig())
        sims = images.matrix @ captions.matrix.T
        k, mi, mc = 16, 8, 8
        within, across = [], []
        for ci in range(k):
            for cj in range(k):
                block = sims[ci * mi : (ci + 1) * mi, cj * mc : (cj + 1) * mc]
                (within if ci == cj else across).append(block.mean())
        assert np.mean(within) > np.mean(across)

    def test_deterministic_bytes(self):
        a = synth_generate(SynthConfig(seed=9))
        b = synth_generate(SynthConfig(seed=9))
        assert write_embeddings(a[0]) == write_embeddings(b[0])
        assert write_embeddings(a[1]) == write_embeddings(b[1])
        assert write_correspondences(a[2]) == write_correspondences(b[2])
        assert write_noise_table(a[3]) == write_noise_table(b[3])

    def test_noise_tracks_distance_to_concept(self):
        cfg = SynthConfig()
        images, _, _, noise = synth_generate(cfg)
        table = dict(noise)
        rng = np.random.default_rng(cfg.seed)
        concepts = rng.standard_normal((cfg.n_concepts, cfg.d))
        concepts /= np.linalg.norm(concepts, axis=1, keepdims=True)
        dists, sigmas = [], []
        for i, sample_id in enumerate(images.ids):
            concept = concepts[i // cfg.images_per_concept]
            dists.append(np.linalg.norm(images.matrix[i] - concept))
            sigmas.append(table[sample_id])
        assert spearman(dists, sigmas) >= 0.9

    def test_complete_bipartite_blocks(self):
        cfg = SynthConfig(n_concepts=4, d=8, images_per_concept=3, captions_per_concept=5)
        images, captions, cmap, _ = synth_generate(cfg)
        assert len(cmap.edges) == 4 * 3 * 5
        for img, cap in cmap.edges:
            assert img[3:6] == cap[3:6]  # same concept index

    def test_invalid_config(self):
        with pytest.raises(DomainError):
            SynthConfig(noise_low=0.5, noise_high=0.1).validate()
        with pytest.raises(DomainError):
            SynthConfig(n_concepts=0).validate()


class TestExpandPairs:
    def test_pairs_follow_edge_order(self):
        images = small_store("image", n=2)
        captions = small_store("text", n=2, seed=3)
        cmap = CorrespondenceMap([("i1", "t0"), ("i0", "t1")])
        pairs = expand_pairs(images, captions, cmap)
        assert pairs.n == 2
        assert np.array_equal(pairs.z_v[0], images.matrix[1])
        assert np.array_equal(pairs.z_t[1], captions.matrix[1])
