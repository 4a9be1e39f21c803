use super::{Diagnosis, ProcedureConfig, TypeCounts};

struct Row {
    cpt: &'static str,
    name: &'static str,
    age: (u32, u32),
    chunks: usize,
    shared: usize,
    unique: TypeCounts,
    train: f64,
    test: f64,
    icd10: &'static [(&'static str, &'static str)],
    vocabulary: &'static [&'static str],
}

const ROWS: &[Row] = &[
    Row {
        cpt: "45378",
        name: "colonoscopy",
        age: (45, 85),
        chunks: 30,
        shared: 0,
        unique: TypeCounts::new(18, 11, 1),
        train: 201.0,
        test: 23.0,
        icd10: &[
            ("Z12.11", "colon cancer screening"),
            ("K92.1", "melena"),
            ("K63.5", "colon polyp"),
            ("R19.5", "fecal occult blood"),
            ("D12.6", "benign neoplasm of colon"),
            ("K57.30", "diverticulosis of large intestine"),
            ("Z86.010", "history of colonic polyps"),
            ("K50.90", "crohn disease"),
        ],
        vocabulary: &[
            "colonoscopy",
            "colorectal",
            "polypectomy",
            "bowel preparation",
            "endoscopic",
            "gastroenterology",
            "surveillance interval",
            "adenoma",
        ],
    },
    Row {
        cpt: "70450",
        name: "ct head",
        age: (18, 90),
        chunks: 56,
        shared: 54,
        unique: TypeCounts::new(1, 1, 0),
        train: 195.0,
        test: 27.0,
        icd10: &[
            ("R51.9", "headache"),
            ("S06.0X0A", "concussion"),
            ("G44.309", "post-traumatic headache"),
            ("R42", "dizziness"),
            ("I63.9", "cerebral infarction"),
            ("G40.909", "epilepsy"),
            ("R41.82", "altered mental status"),
            ("S09.90XA", "head injury"),
        ],
        vocabulary: &[
            "computed tomography",
            "head",
            "without contrast",
            "intracranial hemorrhage",
            "neurological deficit",
            "trauma",
            "skull",
            "emergency",
        ],
    },
    Row {
        cpt: "70486",
        name: "ct maxillofacial",
        age: (18, 85),
        chunks: 43,
        shared: 43,
        unique: TypeCounts::new(0, 0, 0),
        train: 199.0,
        test: 19.0,
        icd10: &[
            ("J32.9", "chronic sinusitis"),
            ("J01.90", "acute sinusitis"),
            ("S02.2XXA", "nasal bone fracture"),
            ("J34.89", "nasal disorder"),
            ("M26.609", "temporomandibular disorder"),
            ("K10.20", "jaw inflammation"),
            ("J32.0", "maxillary sinusitis"),
            ("S02.40XA", "maxillary fracture"),
        ],
        vocabulary: &[
            "computed tomography",
            "maxillofacial",
            "paranasal sinus",
            "facial bones",
            "orbit",
            "sinus surgery planning",
            "mandible",
            "nasal",
        ],
    },
    Row {
        cpt: "70553",
        name: "mri brain",
        age: (18, 85),
        chunks: 54,
        shared: 54,
        unique: TypeCounts::new(0, 0, 0),
        train: 208.0,
        test: 28.0,
        icd10: &[
            ("G35", "multiple sclerosis"),
            ("C71.9", "brain neoplasm"),
            ("G40.909", "epilepsy"),
            ("R90.89", "abnormal brain imaging"),
            ("G93.89", "brain disorder"),
            ("D33.2", "benign brain tumor"),
            ("I67.9", "cerebrovascular disease"),
            ("R47.01", "aphasia"),
        ],
        vocabulary: &[
            "magnetic resonance imaging",
            "brain",
            "with and without contrast",
            "gadolinium",
            "demyelinating lesion",
            "seizure",
            "tumor",
            "neurology",
        ],
    },
    Row {
        cpt: "71260",
        name: "ct chest",
        age: (40, 85),
        chunks: 44,
        shared: 42,
        unique: TypeCounts::new(1, 1, 0),
        train: 205.0,
        test: 20.0,
        icd10: &[
            ("R91.1", "pulmonary nodule"),
            ("C34.90", "lung cancer"),
            ("J18.9", "pneumonia"),
            ("R05.9", "cough"),
            ("I26.99", "pulmonary embolism"),
            ("J84.10", "interstitial lung disease"),
            ("R06.02", "shortness of breath"),
            ("Z87.891", "history of nicotine dependence"),
        ],
        vocabulary: &[
            "computed tomography",
            "chest",
            "with contrast",
            "thorax",
            "pulmonary",
            "lung mass",
            "mediastinum",
            "pleural",
        ],
    },
    Row {
        cpt: "72148",
        name: "mri lumbar spine",
        age: (18, 85),
        chunks: 55,
        shared: 49,
        unique: TypeCounts::new(4, 2, 0),
        train: 178.0,
        test: 20.0,
        icd10: &[
            ("L54", "dorsalgia"),
            ("M54.16", "lumbar radiculopathy"),
            ("M51.26", "lumbar disc displacement"),
            ("M48.061", "spinal stenosis"),
            ("M54.17", "lumbosacral radiculopathy"),
            ("M43.16", "spondylolisthesis"),
            ("G83.4", "cauda equina syndrome"),
            ("M51.36", "disc degeneration"),
        ],
        vocabulary: &[
            "magnetic resonance imaging",
            "lumbar spine",
            "without contrast",
            "low back pain",
            "conservative therapy",
            "six weeks physical therapy",
            "radicular symptoms",
            "red flags",
        ],
    },
    Row {
        cpt: "74177",
        name: "ct abdomen pelvis",
        age: (18, 85),
        chunks: 46,
        shared: 42,
        unique: TypeCounts::new(2, 2, 0),
        train: 193.0,
        test: 12.0,
        icd10: &[
            ("R10.9", "abdominal pain"),
            ("K57.92", "diverticulitis"),
            ("K35.80", "acute appendicitis"),
            ("R10.31", "right lower quadrant pain"),
            ("C18.9", "colon cancer"),
            ("N20.0", "kidney stone"),
            ("K85.90", "acute pancreatitis"),
            ("R19.00", "abdominal mass"),
        ],
        vocabulary: &[
            "computed tomography",
            "abdomen and pelvis",
            "with contrast",
            "abdominal",
            "appendix",
            "bowel",
            "renal",
            "oral contrast",
        ],
    },
    Row {
        cpt: "77067",
        name: "screening mammography",
        age: (40, 80),
        chunks: 41,
        shared: 31,
        unique: TypeCounts::new(6, 4, 0),
        train: 191.0,
        test: 18.0,
        icd10: &[
            ("Z12.31", "breast cancer screening"),
            ("Z80.3", "family history of breast cancer"),
            ("N63.0", "breast lump"),
            ("R92.8", "abnormal mammogram"),
            ("Z15.01", "brca susceptibility"),
            ("N64.4", "mastodynia"),
            ("Z85.3", "history of breast cancer"),
            ("R92.2", "dense breast"),
        ],
        vocabulary: &[
            "mammography",
            "bilateral",
            "breast",
            "tomosynthesis",
            "annual screening",
            "computer-aided detection",
            "women",
            "radiologist",
        ],
    },
    Row {
        cpt: "92507",
        name: "speech language therapy",
        age: (2, 85),
        chunks: 48,
        shared: 0,
        unique: TypeCounts::new(30, 17, 1),
        train: 217.0,
        test: 13.0,
        icd10: &[
            ("F80.0", "phonological disorder"),
            ("F80.2", "mixed receptive expressive language disorder"),
            ("R47.1", "dysarthria"),
            ("I69.320", "aphasia after stroke"),
            ("F80.81", "stuttering"),
            ("R48.8", "symbolic dysfunction"),
            ("F84.0", "autistic disorder"),
            ("R13.10", "dysphagia"),
        ],
        vocabulary: &[
            "speech-language pathology",
            "treatment",
            "plan of care",
            "articulation",
            "fluency",
            "aphasia therapy",
            "functional communication",
            "therapist",
        ],
    },
    Row {
        cpt: "92550",
        name: "tympanometry",
        age: (1, 80),
        chunks: 58,
        shared: 31,
        unique: TypeCounts::new(18, 8, 1),
        train: 213.0,
        test: 20.0,
        icd10: &[
            ("H65.90", "otitis media"),
            ("H66.90", "suppurative otitis media"),
            ("H69.80", "eustachian tube disorder"),
            ("H72.90", "tympanic membrane perforation"),
            ("H90.5", "sensorineural hearing loss"),
            ("H93.8X9", "ear disorder"),
            ("H65.20", "chronic serous otitis"),
            ("H61.20", "cerumen impaction"),
        ],
        vocabulary: &[
            "tympanometry",
            "acoustic reflex",
            "middle ear",
            "effusion",
            "audiology",
            "hearing screening",
            "impedance",
            "ear canal",
        ],
    },
];

/// The ten-procedure table: chunk and shared counts, and the train/test
/// request split, per procedure.
pub fn default_procedures() -> Vec<ProcedureConfig> {
    ROWS.iter()
        .map(|r| ProcedureConfig {
            cpt: r.cpt.into(),
            name: r.name.into(),
            icd10: r
                .icd10
                .iter()
                .map(|(code, description)| Diagnosis {
                    code: (*code).into(),
                    description: (*description).into(),
                })
                .collect(),
            age_range: r.age,
            vocabulary: r.vocabulary.iter().map(|s| (*s).into()).collect(),
            chunk_count: r.chunks,
            shared_count: r.shared,
            unique_types: r.unique,
            train_weight: r.train,
            test_weight: r.test,
        })
        .collect()
}
