#![allow(dead_code)]

use uleak::asm::{parse_program, Program};
use uleak::harness::{gen_input, mutate_secrets, InputAssignment, Interface, SplitMix64};

/// Interface shared by generated programs: a small secret in r1, a public
/// word in r2, a public 32-byte buffer at 0x2000 (base in r8) followed by a
/// partly random secret word.
pub const RANDOM_IFACE: &str = r#"
[[input]]
name = "s"
secrecy = "secret"
length = 1
register = "r1"
bits = 2

[[input]]
name = "p"
secrecy = "public"
length = 8
register = "r2"

[[input]]
name = "buf"
secrecy = "public"
length = 32
address = 0x2000
pointer = "r8"

[[input]]
name = "k"
secrecy = "secret"
length = 8
address = 0x2020
bits = 4
"#;

const ALU: [&str; 10] = ["add", "sub", "mul", "and", "or", "xor", "shl", "shr", "sar", "sltu"];
const WIDTHS: [u8; 4] = [1, 2, 4, 8];

fn pick<T: Copy>(rng: &mut SplitMix64, xs: &[T]) -> T {
    xs[(rng.next_u64() % xs.len() as u64) as usize]
}

fn reg(rng: &mut SplitMix64) -> String {
    format!("r{}", rng.next_u64() % 8)
}

fn dst(rng: &mut SplitMix64) -> String {
    format!("r{}", 1 + rng.next_u64() % 7)
}

fn imm(rng: &mut SplitMix64) -> String {
    match rng.next_u64() % 4 {
        0 => "0".into(),
        1 => "1".into(),
        2 => format!("{}", rng.next_u64() % 16),
        _ => format!("{:#x}", rng.next_u64() & 0xffff),
    }
}

fn mem(rng: &mut SplitMix64, width: u8) -> String {
    let slots = (0x50 - u64::from(width)) / u64::from(width);
    format!("[r8 + {:#x}]", (rng.next_u64() % (slots + 1)) * u64::from(width))
}

/// Straight-line program over r0..r8 with loads and stores into
/// 0x2000..0x2050 and occasional forward branches.
pub fn random_source(rng: &mut SplitMix64) -> String {
    let n = 4 + rng.next_u64() % 20;
    let mut lines = Vec::new();
    for i in 0..n {
        let line = match rng.next_u64() % 10 {
            0 => format!("mov {}, {}", dst(rng), imm(rng)),
            1 => format!("mov {}, {}", dst(rng), reg(rng)),
            2 => {
                let w = pick(rng, &WIDTHS);
                format!("load {}, {}, {w}", dst(rng), mem(rng, w))
            }
            3 | 4 => {
                let w = pick(rng, &WIDTHS);
                format!("store {}, {}, {w}", mem(rng, w), reg(rng))
            }
            5 if i + 1 < n => format!(
                "{} {}, l{}",
                pick(rng, &["jz", "jnz"]),
                reg(rng),
                i + 1 + rng.next_u64() % (n - i)
            ),
            _ => {
                let b = if rng.next_u64().is_multiple_of(2) {
                    reg(rng)
                } else {
                    imm(rng)
                };
                format!("{} {}, {}, {b}", pick(rng, &ALU), dst(rng), reg(rng))
            }
        };
        lines.push(format!("l{i}: {line}"));
    }
    lines.push(format!("l{n}: halt"));
    lines.join("\n")
}

pub fn random_program(rng: &mut SplitMix64) -> (String, Program) {
    let src = random_source(rng);
    let p = parse_program(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    (src, p)
}

pub fn random_iface() -> Interface {
    Interface::parse(RANDOM_IFACE).unwrap()
}

/// A low-equivalent input pair drawn the way campaigns draw them.
pub fn input_pair(iface: &Interface, seed: u64, case: u64) -> (InputAssignment, InputAssignment) {
    let a = gen_input(&mut SplitMix64::for_case(seed, case, 0), iface);
    let b = mutate_secrets(&a, iface, &mut SplitMix64::for_case(seed, case, 1));
    (a, b)
}

/// A generated body run `iterations` times in a counted loop on r9.
pub fn random_loop_source(rng: &mut SplitMix64, iterations: u64) -> String {
    let body = random_source(rng);
    let (body, last) = body.rsplit_once('\n').unwrap();
    let label = last.strip_suffix(" halt").unwrap();
    format!("mov r9, {iterations}\n{body}\n{label} sub r9, r9, 1\njnz r9, l0\nhalt")
}
