//! MQTT 3.1.1 subset for the trigger link: QoS 0 publish/subscribe, keep-alive,
//! no retained messages, wills or persistent sessions.

pub mod broker;
pub mod client;
pub mod codec;
pub mod trigger;

pub use broker::{Broker, BrokerConfig, BrokerStats};
pub use client::{Client, ClientError, ClientOptions};
pub use codec::{decode, encode, CodecError, Connect, Decoded, Packet, Publish, StreamDecoder};
pub use trigger::{
    trigger_client, Backoff, ScheduleEntry, TriggerListener, TriggerMessage, TriggerState,
    DEFAULT_TOPIC,
};
