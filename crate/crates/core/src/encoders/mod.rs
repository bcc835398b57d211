//! The four self-supervised encoder families, their objectives and the
//! pretraining loop.

pub mod checkpoint;
mod config;
mod losses;
mod masks;
mod model;
mod training;


pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, encode_train_ids, load_checkpoint, read_train_ids,
    save_checkpoint, write_train_ids, CHECKPOINT_MAGIC,
};
pub use config::{EncoderConfig, Family};
pub use losses::{info_nce_loss, mae_loss, pool_resolution, ts2vec_loss, PairLoss};
pub use masks::{make_fixed_masks, MaskPattern};
pub use model::{Encoder, EncoderModel, ForwardCache};
pub use training::{contrastive_batch_loss, mae_batch_loss, pretrain, TrainingLog};
