import numpy as np
import pytest

from unisca import matio
from unisca.embedio import (EmbeddingTable, load_table, read_dictionary,
                            read_labels, read_matrix_csv, read_vec_text,
                            save_table, write_vec_text)
from unisca.numerics import ValidationError


class TestVecText:
    def test_minimal_instance(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 3\na 1 2 3\nb 4 5 6\n")
        t = read_vec_text(str(p))
        assert t.tokens == ["a", "b"]
        np.testing.assert_array_equal(t.matrix, [[1, 2, 3], [4, 5, 6]])

    def test_dimension_mismatch_names_line(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 3\na 1 2 3\nb 4 5\n")
        with pytest.raises(ValidationError, match=":3"):
            read_vec_text(str(p))

    def test_max_rows(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 3\na 1 2 3\nb 4 5 6\n")
        t = read_vec_text(str(p), max_rows=1)
        assert t.tokens == ["a"]

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("3\na 1 2 3\n")
        with pytest.raises(ValidationError, match="header"):
            read_vec_text(str(p))

    def test_non_numeric_field(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("1 2\na 1 x\n")
        with pytest.raises(ValidationError, match=":2"):
            read_vec_text(str(p))

    def test_duplicate_token_warns_keeps_first(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("3 1\na 1\na 2\nb 3\n")
        with pytest.warns(UserWarning, match="duplicate"):
            t = read_vec_text(str(p))
        assert t.tokens == ["a", "b"]
        np.testing.assert_array_equal(t.matrix[:, 0], [1.0, 3.0])

    def test_text_roundtrip_exact(self, tmp_path, rng):
        t = EmbeddingTable(tokens=[f"w{i}" for i in range(7)],
                           matrix=rng.normal(size=(7, 4)) * 1e3)
        path = tmp_path / "out.vec"
        write_vec_text(t, str(path))
        back = read_vec_text(str(path))
        assert back.tokens == t.tokens
        # 17 significant digits round-trip float64 exactly
        assert np.array_equal(back.matrix, t.matrix)

    def test_binary_roundtrip_exact(self, tmp_path, rng):
        t = EmbeddingTable(tokens=["x", "y"], matrix=rng.normal(size=(2, 5)))
        save_table(t, str(tmp_path))
        back = load_table(str(tmp_path))
        assert back.tokens == t.tokens
        assert np.array_equal(back.matrix, t.matrix)

    def test_duplicate_tokens_rejected(self, rng):
        with pytest.raises(ValidationError):
            EmbeddingTable(tokens=["a", "a"], matrix=rng.normal(size=(2, 2)))


class TestCsvAndLabels:
    def test_small_matrix(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(read_matrix_csv(str(p)), [[1, 2], [3, 4]])

    def test_ragged_names_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(ValidationError, match="row 2"):
            read_matrix_csv(str(p))

    def test_empty_is_error(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        with pytest.raises(ValidationError, match="empty"):
            read_matrix_csv(str(p))

    def test_labels(self, tmp_path):
        p = tmp_path / "l.txt"
        p.write_text("0\n2\n1\n")
        np.testing.assert_array_equal(read_labels(str(p)), [0, 2, 1])
        with pytest.raises(ValidationError, match="out of range"):
            read_labels(str(p), num_classes=2)

    def test_non_integer_label(self, tmp_path):
        p = tmp_path / "l.txt"
        p.write_text("0\n1.5\n")
        with pytest.raises(ValidationError, match="line 2"):
            read_labels(str(p))

    def test_negative_label(self, tmp_path):
        p = tmp_path / "l.txt"
        p.write_text("-1\n")
        with pytest.raises(ValidationError, match="negative"):
            read_labels(str(p))


class TestDictionary:
    def test_multi_translation(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("0 3\n0 4\n2 1\n")
        d = read_dictionary(str(p))
        assert d == {0: {3, 4}, 2: {1}}

    def test_bad_columns(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("0 1 2\n")
        with pytest.raises(ValidationError, match="line 1"):
            read_dictionary(str(p))


class TestMatio:
    def test_roundtrip_and_header(self, tmp_path, rng):
        a = rng.normal(size=(6, 3))
        matio.write_matrix(str(tmp_path), "A", a, role="test")
        back, header = matio.read_matrix(str(tmp_path), "A")
        assert np.array_equal(a, back)
        assert header["shape"] == [6, 3] and header["role"] == "test"

    def test_integer_dtype(self, tmp_path):
        a = np.arange(10, dtype=np.int64).reshape(5, 2)
        matio.write_matrix(str(tmp_path), "idx", a, dtype="<i8")
        back, _ = matio.read_matrix(str(tmp_path), "idx")
        assert back.dtype == np.int64 and np.array_equal(a, back)

    def test_size_mismatch_detected(self, tmp_path, rng):
        matio.write_matrix(str(tmp_path), "A", rng.normal(size=(4, 2)))
        with open(tmp_path / "A.bin", "ab") as fh:
            fh.write(b"\0" * 8)
        with pytest.raises(ValidationError):
            matio.read_matrix(str(tmp_path), "A")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            matio.read_matrix(str(tmp_path), "nope")
