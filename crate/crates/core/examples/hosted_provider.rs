//! Call a hosted chat model. Needs `<PROVIDER>_API_KEY`; without it the
//! example prints the request it would send.
//!
//! OPENAI_API_KEY=... cargo run --example hosted_provider -- openai gpt-4o-mini

use bias_audit::corpus::{PromptSpec, PromptTemplate};
use bias_audit::gateway::{CompletionRequest, Dialect, HttpChatProvider, Provider, SamplingParams};
use bias_audit::taxonomy::AxisId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let provider = args.next().unwrap_or_else(|| "openai".into());
    let model = args.next().unwrap_or_else(|| "gpt-4o-mini".into());
    let dialect: Dialect = provider.parse()?;

    let template = PromptTemplate::default();
    let spec = PromptSpec::explicit(AxisId::Age, "Millennial", "a Millennial person", &template.id, 1);
    let prompt = template.render(&spec)?;
    let params = SamplingParams::default();

    match HttpChatProvider::from_env(&provider, dialect, &model) {
        Ok(client) => {
            let request = CompletionRequest {
                prompt: &prompt,
                params: &params,
                spec: &spec,
                replicate_index: 0,
            };
            let reply = client.complete(&request)?;
            println!("{}\n\n{:?}", reply.text, reply.meta);
        }
        Err(e) => {
            eprintln!("{e}; showing the request instead\n");
            println!("POST {}", dialect.default_endpoint());
            println!(
                "{}",
                serde_json::to_string_pretty(&dialect.request_body(&model, &prompt, &params))?
            );
        }
    }
    Ok(())
}
