use plugnet::crypto::{
    AuthDigest, AuthField, ChapExchange, IntegrityAttribute, KeyRole, SecretKey,
};
use plugnet::messages::{
    deserialize, message_kind, serialize, ApInfo, BindRequest, BindResponse, ControlCommand,
    DeviceIdentity, ErrorCode, LocalAction, MacAddr, MessageKind, PlugStatus, ProtocolMessage as M,
    SwitchAction, TurnRelayedCommand, WifiCredentials,
};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    "[ -~]{0,24}"
}

fn mac() -> impl Strategy<Value = MacAddr> {
    any::<[u8; 6]>().prop_map(MacAddr)
}

fn key(role: KeyRole) -> impl Strategy<Value = SecretKey> {
    proptest::collection::vec(any::<u8>(), 1..=64)
        .prop_map(move |b| SecretKey::new(role, b).unwrap())
}

fn identity() -> impl Strategy<Value = DeviceIdentity> {
    (mac(), text(), text()).prop_map(|(mac, serial, description)| DeviceIdentity {
        mac,
        serial,
        description,
    })
}

fn ap() -> impl Strategy<Value = ApInfo> {
    (text(), mac()).prop_map(|(ssid, ap_mac)| ApInfo { ssid, ap_mac })
}

fn auth() -> impl Strategy<Value = AuthField> {
    let digest = prop_oneof![
        Just(AuthDigest::Dummy),
        any::<[u8; 20]>().prop_map(AuthDigest::Hmac)
    ];
    (text(), any::<u64>(), any::<[u8; 8]>(), digest).prop_map(
        |(serial, timestamp, nonce, digest)| AuthField {
            serial,
            timestamp,
            nonce,
            digest,
        },
    )
}

fn action() -> impl Strategy<Value = SwitchAction> {
    prop_oneof![Just(SwitchAction::Off), Just(SwitchAction::On)]
}

fn status() -> impl Strategy<Value = PlugStatus> {
    prop_oneof![
        Just(PlugStatus::SwitchOff),
        Just(PlugStatus::SwitchOn),
        Just(PlugStatus::Unavailable)
    ]
}

fn command() -> impl Strategy<Value = ControlCommand> {
    (text(), text(), action(), auth()).prop_map(|(phone_id, target_serial, action, auth)| {
        ControlCommand {
            phone_id,
            target_serial,
            action,
            auth,
        }
    })
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop_oneof![
        Just(ErrorCode::BindRejected),
        Just(ErrorCode::NotBound),
        Just(ErrorCode::AuthRejected),
        Just(ErrorCode::Unavailable),
        Just(ErrorCode::AllocationDenied),
        Just(ErrorCode::WrongChannel),
        Just(ErrorCode::BadRequest),
    ]
}

fn message() -> impl Strategy<Value = M> {
    prop_oneof![
        Just(M::PairGetInfoRequest),
        identity().prop_map(|plug| M::PairGetInfoResponse { plug }),
        (text(), text(), any::<u64>(), ap(), text()).prop_map(
            |(phone_id, phone_description, timestamp, ap, passphrase)| {
                M::PairSetupRequest {
                    phone_id,
                    phone_description,
                    timestamp,
                    wifi: WifiCredentials { ap, passphrase },
                }
            }
        ),
        text().prop_map(|serial| M::PairSetupAck { serial }),
        (
            identity(),
            text(),
            text(),
            ap(),
            any::<u64>(),
            auth(),
            any::<bool>()
        )
            .prop_map(
                |(plug, phone_id, phone_description, wifi, timestamp, auth, re_register)| {
                    M::BindRequest(BindRequest {
                        plug,
                        phone_id,
                        phone_description,
                        wifi,
                        timestamp,
                        auth,
                        re_register,
                    })
                }
            ),
        key(KeyRole::TempKey)
            .prop_map(|temp_key| M::BindResponse(BindResponse::TempKeyIssued { temp_key })),
        (key(KeyRole::PlugKey), key(KeyRole::PhoneKey)).prop_map(|(plug_key, phone_key)| {
            M::BindResponse(BindResponse::KeysIssued {
                plug_key,
                phone_key,
            })
        }),
        (proptest::sample::select(MessageKind::ALL), error_code())
            .prop_map(|(in_reply_to, code)| M::ErrorReply { in_reply_to, code }),
        (text(), text(), any::<u64>(), any::<[u8; 20]>()).prop_map(
            |(phone_id, serial, timestamp, mac)| M::KeyFetchRequest {
                phone_id,
                serial,
                timestamp,
                mac
            }
        ),
        (text(), key(KeyRole::PhoneKey))
            .prop_map(|(serial, phone_key)| M::KeyFetchResponse { serial, phone_key }),
        (text(), key(KeyRole::PhoneKey))
            .prop_map(|(serial, phone_key)| M::PhoneKeyDelivery { serial, phone_key }),
        (text(), status(), auth()).prop_map(|(serial, status, auth)| M::StatusUpdate {
            serial,
            status,
            auth
        }),
        text().prop_map(|serial| M::StatusAck { serial }),
        (text(), text(), auth()).prop_map(|(phone_id, serial, auth)| M::StatusQuery {
            phone_id,
            serial,
            auth
        }),
        (text(), status()).prop_map(|(serial, status)| M::StatusReply { serial, status }),
        command().prop_map(M::ControlCommand),
        (text(), action()).prop_map(|(serial, action)| M::ControlAck { serial, action }),
        prop_oneof![
            Just(LocalAction::Toggle),
            action().prop_map(LocalAction::Set)
        ]
        .prop_map(|action| M::LocalControl { action }),
        (text(), status()).prop_map(|(serial, status)| M::LocalControlAck { serial, status }),
        text().prop_map(|serial| M::TurnChallengeRequest { serial }),
        any::<[u8; 16]>().prop_map(|challenge| M::TurnChallenge { challenge }),
        (text(), any::<[u8; 16]>(), any::<[u8; 20]>(), text()).prop_map(
            |(serial, challenge, response, peer_serial)| {
                M::TurnAllocateRequest {
                    serial,
                    chap: ChapExchange {
                        challenge,
                        response,
                        peer_serial,
                    },
                }
            }
        ),
        any::<u16>().prop_map(|relay_port| M::TurnAllocateResponse { relay_port }),
        (text(), any::<u16>())
            .prop_map(|(serial, relay_port)| M::TurnAllocationNotice { serial, relay_port }),
        text().prop_map(|serial| M::TurnRevoke { serial }),
        text().prop_map(|serial| M::KeyLookupRequest { serial }),
        (text(), proptest::option::of(key(KeyRole::PlugKey)))
            .prop_map(|(serial, plug_key)| M::KeyLookupResponse { serial, plug_key }),
        command().prop_map(|command| M::RelayForward { command }),
        (any::<u16>(), command(), any::<[u8; 20]>()).prop_map(
            |(relay_port, command, integrity)| {
                M::TurnRelayedCommand(TurnRelayedCommand {
                    relay_port,
                    command,
                    integrity: IntegrityAttribute(integrity),
                })
            }
        ),
    ]
}

#[test]
fn strategy_covers_every_kind() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let strategy = message();
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..5000 {
        seen.insert(strategy.new_tree(&mut runner).unwrap().current().kind());
    }
    assert_eq!(seen.len(), MessageKind::ALL.len());
}

#[test]
fn truncated_and_empty_input_are_errors() {
    assert!(deserialize(&[]).is_err());
    let bytes = serialize(&M::PairSetupAck {
        serial: "221ABC".into(),
    });
    for cut in 0..bytes.len() {
        assert!(deserialize(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn redaction_keeps_length_and_hides_passphrase() {
    let msg = M::PairSetupRequest {
        phone_id: "p".into(),
        phone_description: "d".into(),
        timestamp: 1,
        wifi: WifiCredentials {
            ap: ApInfo {
                ssid: "s".into(),
                ap_mac: MacAddr([0; 6]),
            },
            passphrase: "correct horse".into(),
        },
    };
    let bytes = serialize(&msg.redacted());
    assert_eq!(bytes.len(), serialize(&msg).len());
    assert!(!bytes.windows(7).any(|w| w == b"correct"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn round_trip(msg in message()) {
        let bytes = serialize(&msg);
        prop_assert_eq!(message_kind(&bytes).unwrap(), msg.kind());
        prop_assert_eq!(deserialize(&bytes).unwrap(), msg);
    }

    #[test]
    fn distinct_messages_encode_differently(a in message(), b in message()) {
        prop_assume!(a != b);
        prop_assert_ne!(serialize(&a), serialize(&b));
    }

    #[test]
    fn trailing_bytes_are_rejected(msg in message(), extra in proptest::collection::vec(any::<u8>(), 1..8)) {
        let mut bytes = serialize(&msg);
        bytes.extend(extra);
        prop_assert!(deserialize(&bytes).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = deserialize(&bytes);
    }
}
