//! Frame counts and durations checked against symphonia's MP3 demuxer.

use std::io::Cursor;

use proptest::prelude::*;
use symphonia::core::codecs::audio::AudioDecoderOptions;
use symphonia::core::formats::probe::Hint;
use symphonia::core::formats::{FormatOptions, TrackType};
use symphonia::core::io::MediaSourceStream;
use symphonia::core::meta::MetadataOptions;
use wavecaster_core::mp3frame::{
    iterate_frames, parse_header, stream_info, ChannelMode, SilentStream, SAMPLES_PER_FRAME,
};

struct Reference {
    packets: usize,
    decoded_frames: u64,
    sample_rate: u32,
}

fn reference(bytes: Vec<u8>) -> Reference {
    let mss = MediaSourceStream::new(Box::new(Cursor::new(bytes)), Default::default());
    let mut hint = Hint::new();
    hint.with_extension("mp3");
    let mut format = symphonia::default::get_probe()
        .probe(&hint, mss, FormatOptions::default(), MetadataOptions::default())
        .expect("reference probe");
    let track = format.default_track(TrackType::Audio).expect("audio track").clone();
    let params = track.codec_params.as_ref().and_then(|p| p.audio()).expect("audio params");
    let sample_rate = params.sample_rate.expect("sample rate");
    let mut decoder = symphonia::default::get_codecs()
        .make_audio_decoder(params, &AudioDecoderOptions::default())
        .expect("decoder");
    let mut packets = 0;
    let mut decoded_frames = 0;
    while let Some(packet) = format.next_packet().expect("packet") {
        packets += 1;
        let buf = decoder.decode(&packet).expect("decode");
        decoded_frames += buf.frames() as u64;
    }
    Reference {
        packets,
        decoded_frames,
        sample_rate,
    }
}

const FIXTURES: [(u32, u32, ChannelMode, f64); 5] = [
    (32, 32000, ChannelMode::Mono, 12.0),
    (64, 44100, ChannelMode::JointStereo, 10.0),
    (128, 44100, ChannelMode::Stereo, 30.0),
    (192, 48000, ChannelMode::Stereo, 8.0),
    (320, 48000, ChannelMode::JointStereo, 5.0),
];

#[test]
fn fixtures_agree_with_reference_decoder() {
    for (kbps, rate, mode, seconds) in FIXTURES {
        let bytes = SilentStream::new(kbps, rate, mode).unwrap().duration(seconds);
        let ours = stream_info(&bytes).unwrap();
        let theirs = reference(bytes);
        assert_eq!(theirs.sample_rate, rate);
        let frame_s = f64::from(SAMPLES_PER_FRAME) / f64::from(rate);
        assert!(
            (ours.frame_count as i64 - theirs.packets as i64).abs() <= 1,
            "{kbps} kbps @ {rate}: {} vs {} frames",
            ours.frame_count,
            theirs.packets
        );
        let their_duration = theirs.decoded_frames as f64 / f64::from(rate);
        assert!(
            (ours.total_duration_s - their_duration).abs() <= frame_s,
            "{kbps} kbps @ {rate}: {} s vs {} s",
            ours.total_duration_s,
            their_duration
        );
        assert!(ours.is_cbr);
        assert_eq!(ours.nominal_bitrate_kbps, kbps);
    }
}

#[test]
fn thirty_second_file_frame_count() {
    let bytes = SilentStream::new(128, 44100, ChannelMode::Stereo)
        .unwrap()
        .duration(30.0);
    let info = stream_info(&bytes).unwrap();
    let expected = 30.0 / (1152.0 / 44100.0);
    assert!((info.frame_count as f64 - expected).abs() <= 1.0);
}

#[test]
fn documented_headers() {
    let a = parse_header([0xFF, 0xFB, 0x90, 0x00]).unwrap();
    assert_eq!((a.bitrate_kbps, a.sample_rate_hz, a.frame_len_bytes), (128, 44100, 417));
    let b = parse_header([0xFF, 0xFB, 0x50, 0x00]).unwrap();
    assert_eq!((b.bitrate_kbps, b.sample_rate_hz, b.frame_len_bytes), (64, 44100, 208));
    let rebuilt: Vec<u8> = iterate_frames(&[0xFF, 0xFB, 0x90, 0x00]).flat_map(|f| f.bytes.to_vec()).collect();
    assert!(rebuilt.is_empty(), "a lone header is a truncated frame");
}

fn id3v2(body: usize) -> Vec<u8> {
    let mut tag = b"ID3\x04\x00\x00".to_vec();
    let size = body as u32;
    tag.extend([(size >> 21) as u8 & 0x7f, (size >> 14) as u8 & 0x7f, (size >> 7) as u8 & 0x7f, size as u8 & 0x7f]);
    tag.resize(10 + body, 0xAB);
    tag
}

const RATES: [u32; 3] = [32000, 44100, 48000];
const BITRATES: [u32; 14] = [32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_concatenate_to_source(
        br in prop::sample::select(BITRATES.to_vec()),
        sr in prop::sample::select(RATES.to_vec()),
        mono in any::<bool>(),
        count in 1usize..200,
        tag_body in prop::option::of(0usize..2000),
    ) {
        let mode = if mono { ChannelMode::Mono } else { ChannelMode::Stereo };
        let audio = SilentStream::new(br, sr, mode).unwrap().frames(count);
        let mut file = tag_body.map(id3v2).unwrap_or_default();
        file.extend_from_slice(&audio);

        let mut rebuilt = Vec::new();
        let mut n = 0;
        for frame in iterate_frames(&file) {
            prop_assert_eq!(frame.bytes.len(), frame.header.frame_len_bytes);
            rebuilt.extend_from_slice(frame.bytes);
            n += 1;
        }
        prop_assert_eq!(n, count);
        prop_assert_eq!(rebuilt, audio);

        let info = stream_info(&file).unwrap();
        let sum: f64 = iterate_frames(&file).map(|f| f.header.duration_s()).sum();
        prop_assert!((info.total_duration_s - sum).abs() < 1e-9);
    }
}
