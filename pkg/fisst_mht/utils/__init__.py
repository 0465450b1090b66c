"""Utility functions for FISST MHT."""

from fisst_mht.utils.file_utils import ensure_directory, write_hypothesis_table, write_json, write_jsonl

__all__ = ['ensure_directory', 'write_hypothesis_table', 'write_json', 'write_jsonl']
