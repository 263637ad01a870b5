use erc_core::application::{generate_fixture, FixtureOptions};

fn main() {
    let opts = FixtureOptions { blocks: 50, years: 10, confounding: 1.0, ..Default::default() };
    let set = generate_fixture(&opts).expect("fixture");
    set.write_csv(std::io::stdout().lock()).expect("write");
}
