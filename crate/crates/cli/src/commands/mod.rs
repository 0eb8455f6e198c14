pub mod compare;
pub mod fit;
pub mod score;
pub mod simulate;
pub mod summarise;
