//! Error classification for scriptable exit codes: 0 success, 2 usage,
//! 3 data, 4 contract violation, 1 anything else.

use helioadapt::ErrorCategory;

/// A command failure with an explicit exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Contract(String),
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;

/// Maps any error chain onto the documented exit codes, looking through
/// `anyhow` context layers for either a [`CliError`] or a library error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(cli) = cause.downcast_ref::<CliError>() {
            return match cli {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Data(_) => EXIT_DATA,
                CliError::Contract(_) => EXIT_CONTRACT,
            };
        }
        if let Some(lib) = cause.downcast_ref::<helioadapt::Error>() {
            return match lib.category() {
                ErrorCategory::Usage => EXIT_USAGE,
                ErrorCategory::Data => EXIT_DATA,
                ErrorCategory::Contract => EXIT_CONTRACT,
                ErrorCategory::Internal => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn cli_errors_map_to_their_codes() {
        let usage = anyhow::Error::new(CliError::Usage("bad flag".into()));
        let data = anyhow::Error::new(CliError::Data("no file".into()));
        let contract = anyhow::Error::new(CliError::Contract("source-free".into()));
        assert_eq!(exit_code(&usage), 2);
        assert_eq!(exit_code(&data), 3);
        assert_eq!(exit_code(&contract), 4);
    }

    #[test]
    fn library_categories_survive_context_wrapping() {
        let inner = helioadapt::Error::MaskMissing;
        let wrapped = anyhow::Result::<()>::Err(inner.into())
            .context("while adapting")
            .unwrap_err();
        assert_eq!(exit_code(&wrapped), 3);
    }

    #[test]
    fn unknown_errors_exit_one() {
        let err = anyhow::anyhow!("mystery");
        assert_eq!(exit_code(&err), 1);
    }
}
