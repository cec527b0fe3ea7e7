//! RSS 2.0 podcast feed of finished, published programs.

use std::io::Cursor;

use chrono::{DateTime, Utc};
use quick_xml::events::{BytesDecl, BytesText, Event};
use quick_xml::Writer;
use wavecaster_core::catalog::{ProgramState, ScheduledProgram};

#[derive(Debug, Clone)]
pub struct ChannelInfo {
    pub title: String,
    pub description: String,
    /// Public base URL of the API, without a trailing slash.
    pub base_url: String,
    pub language: Option<String>,
}

pub fn episode_url(base_url: &str, program_id: &str) -> String {
    format!("{}/api/programs/{}/episode.mp3", base_url.trim_end_matches('/'), program_id)
}

/// Programs that belong in the feed, newest first.
pub fn feed_items(programs: &[ScheduledProgram]) -> Vec<&ScheduledProgram> {
    let mut items: Vec<&ScheduledProgram> = programs
        .iter()
        .filter(|p| p.published && p.state == ProgramState::Done)
        .collect();
    items.sort_by(|a, b| b.finished_at.cmp(&a.finished_at).then_with(|| a.id.cmp(&b.id)));
    items
}

/// Renders the feed. `episode_len` gives the enclosure size in bytes.
pub fn build_podcast_feed(
    programs: &[ScheduledProgram],
    channel: &ChannelInfo,
    now: DateTime<Utc>,
    episode_len: impl Fn(&ScheduledProgram) -> u64,
) -> String {
    let mut writer = Writer::new_with_indent(Cursor::new(Vec::new()), b' ', 2);
    write_feed(&mut writer, programs, channel, now, &episode_len).expect("writing to memory cannot fail");
    String::from_utf8(writer.into_inner().into_inner()).expect("feed is utf-8")
}

fn write_feed(
    w: &mut Writer<Cursor<Vec<u8>>>,
    programs: &[ScheduledProgram],
    channel: &ChannelInfo,
    now: DateTime<Utc>,
    episode_len: &dyn Fn(&ScheduledProgram) -> u64,
) -> std::io::Result<()> {
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))?;
    w.create_element("rss")
        .with_attribute(("version", "2.0"))
        .write_inner_content(|w| {
            w.create_element("channel").write_inner_content(|w| {
                text(w, "title", &channel.title)?;
                text(w, "link", &format!("{}/", channel.base_url.trim_end_matches('/')))?;
                text(w, "description", &channel.description)?;
                if let Some(lang) = &channel.language {
                    text(w, "language", lang)?;
                }
                text(w, "lastBuildDate", &now.to_rfc2822())?;
                text(w, "generator", "wavecaster")?;
                for program in feed_items(programs) {
                    write_item(w, program, channel, episode_len(program))?;
                }
                Ok(())
            })?;
            Ok(())
        })?;
    Ok(())
}

fn write_item(
    w: &mut Writer<Cursor<Vec<u8>>>,
    program: &ScheduledProgram,
    channel: &ChannelInfo,
    length: u64,
) -> std::io::Result<()> {
    let published = program.finished_at.unwrap_or(program.requested_start);
    w.create_element("item").write_inner_content(|w| {
        text(w, "title", &program.title)?;
        text(w, "description", &program.description)?;
        text(w, "pubDate", &published.to_rfc2822())?;
        w.create_element("enclosure")
            .with_attribute(("url", episode_url(&channel.base_url, &program.id).as_str()))
            .with_attribute(("length", length.to_string().as_str()))
            .with_attribute(("type", "audio/mpeg"))
            .write_empty()?;
        w.create_element("guid")
            .with_attribute(("isPermaLink", "false"))
            .write_text_content(BytesText::new(&program.id))?;
        Ok(())
    })?;
    Ok(())
}

fn text(w: &mut Writer<Cursor<Vec<u8>>>, name: &str, value: &str) -> std::io::Result<()> {
    w.create_element(name).write_text_content(BytesText::new(value))?;
    Ok(())
}
