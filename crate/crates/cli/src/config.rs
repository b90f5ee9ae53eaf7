//! `--config` files: flat TOML key/value pairs that fill in flags the
//! command line left out.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use threadsum_core::{Error, Result};

/// Appends the chosen subcommand's config-file entries to `args` as flags.
/// Keys may use `-` or `_`; keys given explicitly on the command line are
/// skipped, so flags win.
pub fn merge(cmd: &Command, matches: &ArgMatches, mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(args);
    };
    let Some(path) = sub.try_get_one::<PathBuf>("config").ok().flatten() else {
        return Ok(args);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let sub_cmd = cmd.find_subcommand(name).expect("matched subcommand exists");

    for (key, value) in &table {
        let long = key.replace('_', "-");
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config")
            .ok_or_else(|| Error::Config(format!("{}: unknown key {key:?} for {name}", path.display())))?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = OsString::from(format!("--{long}"));
        let takes_value = arg.get_action().takes_values();
        let text = match value {
            toml::Value::Boolean(b) if !takes_value => {
                if *b {
                    args.push(flag);
                }
                continue;
            }
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => {
                return Err(Error::Config(format!(
                    "{}: {key} must be a string, number or boolean, not {}",
                    path.display(),
                    other.type_str()
                )))
            }
        };
        if !takes_value {
            return Err(Error::Config(format!("{}: {key} is a switch; use true or false", path.display())));
        }
        args.push(flag);
        args.push(text.into());
    }
    Ok(args)
}
