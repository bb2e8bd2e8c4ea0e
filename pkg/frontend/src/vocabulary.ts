// Presentation constants for the label QC picker. The server is the
// validator; this list only populates the dropdown.

export const PROCEDURES: readonly string[] = [
  "pancreatectomy",
  "pancreaticoduodenectomy",
  "splenectomy",
  "ampullectomy",
  "hepatectomy",
  "nephrectomy",
  "low anterior resection",
  "colectomy",
  "abdominoperineal resection",
  "pulmonary lobectomy",
  "hartmanns",
  "prostatectomy",
  "gastric bypass",
  "duodenal switch",
  "gastrectomy",
  "small bowel resection",
  "hernia repair",
  "ulcer repair",
  "cholecystectomy",
  "appendectomy",
  "ileocolic resection",
  "cecectomy",
  "myomectomy",
  "hysterectomy",
  "nissen fundoplication",
  "adrenalectomy",
  "thymectomy",
  "rectopexy",
  "adhesiolysis",
  "esophagectomy",
  "cystectomy",
  "jejunostomy",
  "ileorectal anastomosis",
  "kidney transplant",
  "vaginectomy",
];

export const SURGERY_TYPES: readonly string[] = ["robotic", "non-robotic"];

export const STORYBOARD_GUIDANCE =
  "Approve when at least 50% of the key frames show surgical views from " +
  "inside the patient.";

export const KIND_LABELS: Record<string, string> = {
  storyboard_verify: "Storyboard",
  trim_verify: "Trim",
  label_qc: "Labels",
};

export const KINDS = ["storyboard_verify", "trim_verify", "label_qc"] as const;
