use std::path::PathBuf;

use cotprobe::backend::ProviderConfig;
use cotprobe::config::Config;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn default_file_matches_built_in_defaults() {
    let cfg = Config::load(&shipped("default.toml")).unwrap();
    assert_eq!(cfg, Config::default());
}

#[test]
fn live_file_selects_the_chat_provider() {
    let cfg = Config::load(&shipped("live_chat.toml")).unwrap();
    let ProviderConfig::HttpChat(h) = &cfg.provider else { panic!("{:?}", cfg.provider) };
    assert_eq!(h.auth_env, "PROBE_API_KEY");
    assert_eq!(h.response_pointer, "/choices/0/message/content");
    assert_eq!(cfg.styles().unwrap().len(), 3);
}
