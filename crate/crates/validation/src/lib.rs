//! Holds the `acceptance` test target, which exercises `hopkins-core` and
//! the `hopkins-loss` command line end to end.
