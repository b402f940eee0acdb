//! CTIN file formats and CLI plumbing.
