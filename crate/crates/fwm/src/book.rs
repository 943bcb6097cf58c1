//! Keeps the book's code samples compiling: every fenced Rust block in
//! `book/src/*.md` runs as a doc-test of this crate.

#[cfg(doctest)]
macro_rules! book_page {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        pub struct $name;
    };
}

#[cfg(doctest)]
book_page!(Introduction, "../../../book/src/introduction.md");
#[cfg(doctest)]
book_page!(Simulator, "../../../book/src/simulator.md");
#[cfg(doctest)]
book_page!(Observations, "../../../book/src/observations.md");
#[cfg(doctest)]
book_page!(Autodiff, "../../../book/src/autodiff.md");
#[cfg(doctest)]
book_page!(Model, "../../../book/src/model.md");
#[cfg(doctest)]
book_page!(Training, "../../../book/src/training.md");
#[cfg(doctest)]
book_page!(Evaluation, "../../../book/src/evaluation.md");
#[cfg(doctest)]
book_page!(Planning, "../../../book/src/planning.md");
#[cfg(doctest)]
book_page!(Cli, "../../../book/src/cli.md");
#[cfg(doctest)]
book_page!(Reproducibility, "../../../book/src/reproducibility.md");
