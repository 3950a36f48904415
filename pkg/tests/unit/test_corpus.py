"""Unit tests for JSONL corpus reading and validation."""

from pathlib import Path

import pytest

from san_attn.data_access.corpus import read_corpus, write_corpus, write_decodes
from san_attn.domain.errors import FormatError, InputError


def _write(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestReadCorpus:
    """Tests for read_corpus."""

    def test_valid_corpus(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3, 4], "tgt": [4, 3]}', '{"src": [5], "tgt": [6, 7]}'])

        result = read_corpus(path, vocab=10)

        assert result.is_valid is True
        assert result.error_message is None
        assert result.records == [([3, 4], [4, 3]), ([5], [6, 7])]

    def test_missing_target_is_none(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3, 4], "tgt": [4]}', '{"src": [5]}'])

        records = read_corpus(path, vocab=10).require()

        assert records[1] == ([5], None)

    def test_source_only_corpus(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3]}', '{"src": [4, 5]}'])

        assert read_corpus(path, vocab=10).require() == [([3], None), ([4, 5], None)]

    def test_out_of_vocab_names_record(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3, 4]}', '{"src": [3, 99]}'])

        result = read_corpus(path, vocab=10)

        assert result.is_valid is False
        assert result.error_message is not None
        assert "record 1" in result.error_message
        assert "token 99" in result.error_message
        with pytest.raises(InputError):
            result.require()

    def test_negative_id(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3], "tgt": [-1]}'])

        result = read_corpus(path, vocab=10)

        assert result.is_valid is False
        assert "tgt position 0" in (result.error_message or "")

    def test_fractional_id_names_record(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3, 4]}', '{"src": [1.5]}'])

        result = read_corpus(path, vocab=10)

        assert result.is_valid is False
        assert "record 1 (src position 0, token 1.5)" in (result.error_message or "")

    def test_fractional_target_alongside_integer_source(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3], "tgt": [4]}', '{"src": [5], "tgt": [6, 2.5]}'])

        result = read_corpus(path, vocab=10)

        assert result.is_valid is False
        assert "record 1 (tgt position 1" in (result.error_message or "")

    def test_empty_sentence(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3]}', '{"src": []}'])

        assert read_corpus(path, vocab=10).is_valid is False

    def test_malformed_json(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"src": [3', "nope"])

        with pytest.raises(FormatError):
            read_corpus(path, vocab=10)

    def test_missing_source_field(self, tmp_path: Path) -> None:
        path = _write(tmp_path / "c.jsonl", ['{"tgt": [3]}'])

        with pytest.raises(FormatError):
            read_corpus(path, vocab=10)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FormatError):
            read_corpus(tmp_path / "absent.jsonl", vocab=10)


class TestWriters:
    """Tests for write_corpus and write_decodes."""

    def test_write_then_read(self, tmp_path: Path) -> None:
        records = [([3, 4], [4, 3]), ([5, 6, 7], None)]

        path = write_corpus(records, tmp_path / "out.jsonl")

        assert read_corpus(path, vocab=10).require() == [([3, 4], [4, 3]), ([5, 6, 7], None)]

    def test_decodes_jsonl(self, tmp_path: Path) -> None:
        path = write_decodes([([3, 4], [4, 2])], tmp_path / "d.jsonl")

        assert path.read_text(encoding="utf-8") == '{"src": [3, 4], "hyp": [4, 2]}\n'
