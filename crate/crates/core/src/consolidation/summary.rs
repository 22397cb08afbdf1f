use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, Providers, Stage};
use crate::text::first_sentence;
use crate::types::MemScene;

/// First sentence of each episode, joined by spaces.
pub fn template_summary<S: AsRef<str>>(episodes: &[S]) -> String {
    episodes
        .iter()
        .map(|e| first_sentence(e.as_ref().trim()))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Recomputes a scene summary from its members' episodes.
///
/// On provider failure the prior summary is kept (or the template summary
/// when there is none yet) and a warning is logged.
pub fn update_scene_summary(scene: &MemScene, member_episodes: &[&str], providers: &Providers) -> String {
    let prompt = prompts::scene_summary_prompt(scene.earliest_event, scene.latest_event, member_episodes);
    match providers.chat(&ChatRequest::new(prompt, schema::SCENE_SUMMARY, Stage::Add)) {
        Ok(reply) if !reply.trim().is_empty() => reply.trim().to_string(),
        Ok(_) => {
            tracing::warn!(scene = %scene.scene_id, "empty scene summary; keeping prior");
            keep_prior(scene, member_episodes)
        }
        Err(e) => {
            tracing::warn!(scene = %scene.scene_id, error = %e, "scene summary failed; keeping prior");
            keep_prior(scene, member_episodes)
        }
    }
}

fn keep_prior(scene: &MemScene, member_episodes: &[&str]) -> String {
    if scene.summary.is_empty() {
        template_summary(member_episodes)
    } else {
        scene.summary.clone()
    }
}
