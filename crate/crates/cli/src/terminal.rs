use std::io::{BufRead, Write};

use harness_core::governance::OperatorChannel;

/// Asks on stderr, reads answers from stdin. End of input counts as no
/// answer, which the policy treats as deny.
pub struct TerminalOperator<R> {
    input: R,
}

impl<R: BufRead> TerminalOperator<R> {
    pub fn new(input: R) -> Self {
        Self { input }
    }

    fn read_line(&mut self, prompt: &str) -> Option<String> {
        eprint!("{prompt}");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim().to_string()),
        }
    }
}

impl<R: BufRead> OperatorChannel for TerminalOperator<R> {
    fn ask(&mut self, action: &str) -> Option<bool> {
        loop {
            match self.read_line(&format!("allow {action}? [y/n] "))?.to_ascii_lowercase().as_str() {
                "y" | "yes" => return Some(true),
                "n" | "no" => return Some(false),
                _ => eprintln!("please answer y or n"),
            }
        }
    }

    fn clarify(&mut self, question: &str) -> Option<String> {
        self.read_line(&format!("{question}\n> ")).filter(|s| !s.is_empty())
    }
}

pub fn parse_answer(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "true" => Ok(true),
        "n" | "no" | "false" => Ok(false),
        other => Err(format!("expected y or n, got `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_answers_until_eof() {
        let mut op = TerminalOperator::new("maybe\ny\nN\n".as_bytes());
        assert_eq!(op.ask("lookup"), Some(true));
        assert_eq!(op.ask("lookup"), Some(false));
        assert_eq!(op.ask("lookup"), None);
    }

    #[test]
    fn clarification_lines() {
        let mut op = TerminalOperator::new("use staging\n\n".as_bytes());
        assert_eq!(op.clarify("which env?"), Some("use staging".into()));
        assert_eq!(op.clarify("again?"), None);
    }

    #[test]
    fn answer_flags() {
        assert_eq!(parse_answer("Y"), Ok(true));
        assert_eq!(parse_answer("no"), Ok(false));
        assert!(parse_answer("x").is_err());
    }
}
