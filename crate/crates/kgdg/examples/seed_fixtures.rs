//! Write the synthetic fixture corpus, statute index and seed problems to a
//! directory, for offline runs against the mock backend:
//!
//! ```text
//! cargo run -p kgdg --example seed_fixtures -- fixtures/
//! ```

use kgdg::fixtures::{write_fixture_tree, FixtureSpec};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures".to_string());
    let spec = FixtureSpec::default();
    let paths = write_fixture_tree(std::path::Path::new(&dir), &spec).expect("writing fixtures");
    println!("corpus:   {}", paths.corpus.display());
    println!("statutes: {}", paths.statutes.display());
    println!("seeds:    {}", paths.seeds.display());
}
