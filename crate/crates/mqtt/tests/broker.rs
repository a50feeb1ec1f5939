use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use sls_mqtt::codec::{encode, Connect, Packet, PacketReader};
use sls_mqtt::trigger::{
    trigger_client, Backoff, ScheduleEntry, TriggerListener, TriggerState, DEFAULT_TOPIC,
};
use sls_mqtt::{Broker, BrokerConfig, Client, ClientError, ClientOptions};

fn broker() -> Broker {
    Broker::start("127.0.0.1:0", BrokerConfig::default()).unwrap()
}

fn client(b: &Broker, id: &str) -> Client {
    Client::connect(&b.local_addr().to_string(), &ClientOptions::new(id)).unwrap()
}

fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < timeout {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    f()
}

#[test]
fn published_on_reaches_subscriber_within_50ms() {
    let b = broker();
    let mut ctl = client(&b, "controller");
    ctl.subscribe(DEFAULT_TOPIC).unwrap();
    let switch = client(&b, "nodemcu");
    let mut worst = Duration::ZERO;
    for _ in 0..20 {
        let sent = Instant::now();
        switch.publish(DEFAULT_TOPIC, b"ON").unwrap();
        let msg = ctl
            .recv_timeout(Duration::from_secs(1))
            .unwrap()
            .expect("delivered");
        worst = worst.max(sent.elapsed());
        assert_eq!(msg.topic, DEFAULT_TOPIC);
        assert_eq!(msg.payload, b"ON");
    }
    assert!(
        worst < Duration::from_millis(50),
        "worst delivery {worst:?}"
    );
    // Exactly one copy of each.
    assert!(ctl
        .recv_timeout(Duration::from_millis(50))
        .unwrap()
        .is_none());
}

#[test]
fn publish_without_subscribers_keeps_broker_healthy() {
    let b = broker();
    let p = client(&b, "p");
    p.publish("nobody/listens", b"ON").unwrap();
    let mut s = client(&b, "s");
    s.subscribe("sls/trigger").unwrap();
    p.publish("sls/trigger", b"OFF").unwrap();
    assert_eq!(
        s.recv_timeout(Duration::from_secs(1))
            .unwrap()
            .unwrap()
            .payload,
        b"OFF"
    );
    assert_eq!(b.stats().published, 2);
}

#[test]
fn single_level_wildcard_subscription() {
    let b = broker();
    let mut s = client(&b, "s");
    s.subscribe("sls/+").unwrap();
    let p = client(&b, "p");
    p.publish("sls/trigger", b"ON").unwrap();
    p.publish("sls/trigger/deep", b"ON").unwrap();
    p.publish("other/trigger", b"ON").unwrap();
    p.publish("sls/status", b"x").unwrap();
    let a = s.recv_timeout(Duration::from_secs(1)).unwrap().unwrap();
    let b2 = s.recv_timeout(Duration::from_secs(1)).unwrap().unwrap();
    assert_eq!(
        (a.topic.as_str(), b2.topic.as_str()),
        ("sls/trigger", "sls/status")
    );
    assert!(s.recv_timeout(Duration::from_millis(50)).unwrap().is_none());
}

#[test]
fn overlapping_filters_deliver_once() {
    let b = broker();
    let mut s = client(&b, "s");
    s.subscribe("sls/+").unwrap();
    s.subscribe("sls/trigger").unwrap();
    client(&b, "p").publish("sls/trigger", b"ON").unwrap();
    assert!(s.recv_timeout(Duration::from_secs(1)).unwrap().is_some());
    assert!(s.recv_timeout(Duration::from_millis(80)).unwrap().is_none());
}

#[test]
fn multi_level_wildcard_is_rejected() {
    let b = broker();
    let mut s = client(&b, "s");
    assert!(matches!(
        s.subscribe("sls/#"),
        Err(ClientError::SubscribeRejected(_))
    ));
    // Connection stays usable.
    s.subscribe("sls/trigger").unwrap();
}

#[test]
fn new_connection_supersedes_same_client_id() {
    let b = broker();
    let mut first = client(&b, "dup");
    first.subscribe(DEFAULT_TOPIC).unwrap();
    let mut second = client(&b, "dup");
    second.subscribe(DEFAULT_TOPIC).unwrap();
    assert!(wait_until(Duration::from_secs(2), || !first.is_connected()));
    assert_eq!(b.clients(), ["dup"]);
    client(&b, "p").publish(DEFAULT_TOPIC, b"ON").unwrap();
    assert!(second
        .recv_timeout(Duration::from_secs(1))
        .unwrap()
        .is_some());
}

#[test]
fn protocol_violation_closes_only_that_connection() {
    let b = broker();
    let mut good = client(&b, "good");
    good.subscribe(DEFAULT_TOPIC).unwrap();

    let mut raw = TcpStream::connect(b.local_addr()).unwrap();
    raw.write_all(
        &encode(&Packet::Connect(Connect {
            client_id: "bad".into(),
            keep_alive: 0,
            clean_session: true,
        }))
        .unwrap(),
    )
    .unwrap();
    let mut reader = PacketReader::new(raw.try_clone().unwrap());
    assert!(matches!(
        reader.read_packet().unwrap(),
        Packet::ConnAck { return_code: 0, .. }
    ));
    // PubAck is outside the subset.
    raw.write_all(&[0x40, 0x02, 0x00, 0x01]).unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let mut buf = [0u8; 8];
    assert_eq!(raw.read(&mut buf).unwrap_or(0), 0);

    client(&b, "p").publish(DEFAULT_TOPIC, b"ON").unwrap();
    assert!(good.recv_timeout(Duration::from_secs(1)).unwrap().is_some());
}

#[test]
fn idle_connection_expires_after_one_and_a_half_keep_alives() {
    let b = broker();
    let mut raw = TcpStream::connect(b.local_addr()).unwrap();
    raw.write_all(
        &encode(&Packet::Connect(Connect {
            client_id: "idle".into(),
            keep_alive: 1,
            clean_session: true,
        }))
        .unwrap(),
    )
    .unwrap();
    let mut reader = PacketReader::new(raw.try_clone().unwrap());
    reader.read_packet().unwrap();
    let start = Instant::now();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = [0u8; 8];
    assert_eq!(raw.read(&mut buf).unwrap_or(0), 0);
    let waited = start.elapsed();
    assert!(
        waited >= Duration::from_millis(1400) && waited < Duration::from_millis(2500),
        "{waited:?}"
    );
}

#[test]
fn ping_keeps_connection_alive() {
    let b = broker();
    let opts = ClientOptions {
        keep_alive: 1,
        ..ClientOptions::new("pinger")
    };
    let mut c = Client::connect(&b.local_addr().to_string(), &opts).unwrap();
    c.subscribe(DEFAULT_TOPIC).unwrap();
    std::thread::sleep(Duration::from_millis(2_200));
    assert!(c.is_connected());
    client(&b, "p").publish(DEFAULT_TOPIC, b"ON").unwrap();
    assert!(c.recv_timeout(Duration::from_secs(1)).unwrap().is_some());
}

#[test]
fn stalled_subscriber_does_not_block_others() {
    let b = Broker::start(
        "127.0.0.1:0",
        BrokerConfig {
            queue_depth: 2,
            ..BrokerConfig::default()
        },
    )
    .unwrap();
    // Subscribes, then never reads.
    let mut stalled = TcpStream::connect(b.local_addr()).unwrap();
    stalled
        .write_all(
            &encode(&Packet::Connect(Connect {
                client_id: "stalled".into(),
                keep_alive: 0,
                clean_session: true,
            }))
            .unwrap(),
        )
        .unwrap();
    stalled
        .write_all(
            &encode(&Packet::Subscribe {
                packet_id: 1,
                filters: vec![("bulk".into(), 0)],
            })
            .unwrap(),
        )
        .unwrap();

    let mut live = client(&b, "live");
    live.subscribe("bulk").unwrap();
    let p = client(&b, "p");
    let chunk = vec![7u8; 60_000];
    let start = Instant::now();
    for _ in 0..300 {
        p.publish("bulk", &chunk).unwrap();
    }
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(wait_until(Duration::from_secs(2), || b.stats().dropped > 0));
    // The stalled session's queue stays full; a later message still reaches the live one.
    std::thread::sleep(Duration::from_millis(200));
    while live
        .recv_timeout(Duration::from_millis(100))
        .unwrap()
        .is_some()
    {}
    p.publish("bulk", b"last").unwrap();
    let m = live
        .recv_timeout(Duration::from_secs(1))
        .unwrap()
        .expect("live subscriber still served");
    assert_eq!(m.payload, b"last");
    drop(stalled);
}

#[test]
fn trigger_schedule_publishes_in_order() {
    let b = broker();
    let mut s = client(&b, "ctl");
    s.subscribe(DEFAULT_TOPIC).unwrap();
    let schedule = [
        ScheduleEntry {
            at: Duration::ZERO,
            state: TriggerState::On,
        },
        ScheduleEntry {
            at: Duration::from_millis(100),
            state: TriggerState::Off,
        },
        ScheduleEntry {
            at: Duration::from_millis(200),
            state: TriggerState::On,
        },
    ];
    let run = trigger_client(
        &b.local_addr().to_string(),
        DEFAULT_TOPIC,
        &schedule,
        &ClientOptions::new("switch"),
        &Backoff::default(),
    )
    .unwrap();
    assert_eq!(run.published, 3);
    let got: Vec<Vec<u8>> = (0..3)
        .map(|_| {
            s.recv_timeout(Duration::from_secs(1))
                .unwrap()
                .unwrap()
                .payload
        })
        .collect();
    assert_eq!(got, [b"ON".to_vec(), b"OFF".to_vec(), b"ON".to_vec()]);
}

#[test]
fn trigger_client_waits_for_late_broker() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("127.0.0.1:{port}");
    let schedule = vec![
        ScheduleEntry {
            at: Duration::from_millis(700),
            state: TriggerState::On,
        },
        ScheduleEntry {
            at: Duration::from_millis(750),
            state: TriggerState::Off,
        },
        ScheduleEntry {
            at: Duration::from_millis(800),
            state: TriggerState::On,
        },
    ];
    let ep = endpoint.clone();
    let handle = std::thread::spawn(move || {
        trigger_client(
            &ep,
            DEFAULT_TOPIC,
            &schedule,
            &ClientOptions::new("switch"),
            &Backoff::default(),
        )
    });
    std::thread::sleep(Duration::from_millis(250));
    let b = Broker::start(&endpoint, BrokerConfig::default()).unwrap();
    let mut s = client(&b, "ctl");
    s.subscribe(DEFAULT_TOPIC).unwrap();
    let run = handle.join().unwrap().unwrap();
    assert_eq!(run.published, 3);
    assert!(run.retries >= 1);
    let got: Vec<Vec<u8>> = (0..3)
        .map(|_| {
            s.recv_timeout(Duration::from_secs(1))
                .unwrap()
                .unwrap()
                .payload
        })
        .collect();
    assert_eq!(got, [b"ON".to_vec(), b"OFF".to_vec(), b"ON".to_vec()]);
}

#[test]
fn trigger_client_gives_up_when_no_broker() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let backoff = Backoff {
        give_up_after: Duration::from_millis(300),
        ..Backoff::default()
    };
    let schedule = [ScheduleEntry {
        at: Duration::ZERO,
        state: TriggerState::On,
    }];
    let r = trigger_client(
        &format!("127.0.0.1:{port}"),
        DEFAULT_TOPIC,
        &schedule,
        &ClientOptions::new("x"),
        &backoff,
    );
    assert!(r.is_err());
}

#[test]
fn listener_filters_payloads_and_survives_broker_restart() {
    let mut b = broker();
    let endpoint = b.local_addr().to_string();
    let (tx, rx) = std::sync::mpsc::channel();
    let listener = TriggerListener::spawn(
        endpoint.clone(),
        DEFAULT_TOPIC.into(),
        ClientOptions::new("ctl"),
        Backoff::default(),
        move |s| tx.send(s).unwrap(),
    );
    assert!(listener.wait_connected(Duration::from_secs(2)));
    let p = client(&b, "p");
    for payload in [&b"on"[..], b"ON", b"garbage", b"OFF"] {
        p.publish(DEFAULT_TOPIC, payload).unwrap();
    }
    assert_eq!(
        rx.recv_timeout(Duration::from_secs(1)).unwrap(),
        TriggerState::On
    );
    assert_eq!(
        rx.recv_timeout(Duration::from_secs(1)).unwrap(),
        TriggerState::Off
    );
    assert!(rx.recv_timeout(Duration::from_millis(50)).is_err());

    drop(p);
    b.shutdown();
    drop(b);
    assert!(wait_until(Duration::from_secs(2), || !listener.is_connected()));
    let b = Broker::start(&endpoint, BrokerConfig::default()).unwrap();
    assert!(listener.wait_connected(Duration::from_secs(3)));
    client(&b, "p2").publish(DEFAULT_TOPIC, b"ON").unwrap();
    assert_eq!(
        rx.recv_timeout(Duration::from_secs(1)).unwrap(),
        TriggerState::On
    );
}
