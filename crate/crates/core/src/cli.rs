//! Command-line entry point (placeholder while the pipeline lands).

pub fn run(_args: &[String]) -> u8 {
    2
}
