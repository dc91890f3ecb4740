use std::env;
use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR is set by cargo"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("cbindgen.toml is readable");
    match cbindgen::generate_with_config(&dir, config) {
        Ok(bindings) => {
            std::fs::create_dir_all(dir.join("include")).expect("include/ is creatable");
            bindings.write_to_file(dir.join("include").join("sphereloc.h"));
        }
        // keep building when the header cannot be generated (e.g. parse errors
        // surface better from rustc itself)
        Err(e) => println!("cargo:warning=header not generated: {e}"),
    }
}
