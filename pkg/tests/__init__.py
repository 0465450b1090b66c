"""Unit test package for fisst_mht."""
