//! Sample persona documents shipped with the crate. The mock backend answers
//! persona-generation requests with one of these; tests use all five.

pub const PERSONA_G3X03G: &str = include_str!("../assets/personas/g3x03g.json");
pub const PERSONA_G2X02V: &str = include_str!("../assets/personas/g2x02v.json");
pub const PERSONA_G4X03V: &str = include_str!("../assets/personas/g4x03v.json");
pub const PERSONA_G3X02G: &str = include_str!("../assets/personas/g3x02g.json");
pub const PERSONA_G4X01V: &str = include_str!("../assets/personas/g4x01v.json");

pub const SAMPLE_PERSONAS: [&str; 5] = [
    PERSONA_G3X03G,
    PERSONA_G2X02V,
    PERSONA_G4X03V,
    PERSONA_G3X02G,
    PERSONA_G4X01V,
];

/// The document the mock backend returns for persona generation.
pub const MOCK_PERSONA: &str = PERSONA_G4X01V;
