//! aarch64 disassembly, control flow, use-def chains and message-send devirtualization.
pub mod cfg;
pub mod decode;
pub mod listing;
pub mod resolve;
pub mod usedef;

pub use cfg::{annotate_calls, build_function, BasicBlock, CallInfo, CodeSource, DisasmError, FunctionBody, UseDef};
pub use decode::{decode, decode_word, Instruction, Kind, Location, Op};
pub use resolve::{CallSite, CallTarget, ReceiverType, ResolvedValue, Resolver};
pub use usedef::compute_use_def;
