import { afterEach, describe, expect, it, vi } from "vitest";
import { mount, mulberry32 } from "./harness.js";
import {
  MockGateway,
  labelPayload,
  storyboardPayload,
  trimPayload,
} from "./mock_gateway.js";
import type { TaskKind } from "../src/types.js";

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("decision round-trips", () => {
  it("approve transitions the displayed task to the API-reported state", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    const h = await mount(gateway);
    await h.open(id);
    await h.click(".action.approve");

    expect(gateway.getStatus(id)).toBe("approved");
    expect(h.text(".decided .status")).toBe("approved by reviewer");
    expect(gateway.decisions).toHaveLength(1);
    expect(gateway.decisions[0]).toMatchObject({ taskId: id, action: "approve" });
    expect(h.query(".actions")).toBeNull();
  });

  it("reject carries the reviewer note along", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    const h = await mount(gateway);
    await h.open(id);
    const note = h.find(".note") as HTMLInputElement;
    note.value = "mostly out-of-body footage";
    note.dispatchEvent(new Event("input", { bubbles: true }));
    await h.click(".action.reject");

    expect(gateway.getStatus(id)).toBe("rejected");
    expect(gateway.decisions[0].action).toBe("reject");
    expect(h.text(".decision-note")).toBe("note: mostly out-of-body footage");
  });

  it("a double-submit records exactly one decision", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    const h = await mount(gateway);
    await h.open(id);

    const approve = h.find(".action.approve") as HTMLButtonElement;
    approve.click();
    approve.click();
    await h.app.whenIdle();

    expect(gateway.decisions).toHaveLength(1);
    expect(h.text(".decided .status")).toBe("approved by reviewer");
  });

  it("a retry after a dropped response is deduplicated by the token", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    gateway.dropDecisionResponseOnce = true;
    const h = await mount(gateway);
    await h.open(id);

    await h.click(".action.approve");
    // The server applied the decision but the response never arrived, so
    // the task must still render as pending: no ack, no terminal state.
    expect(gateway.decisions).toHaveLength(1);
    expect(h.query(".decided")).toBeNull();
    expect(h.query(".banner-offline")).not.toBeNull();

    await h.click(".action.approve");
    expect(gateway.decisions).toHaveLength(1);
    expect(h.text(".decided .status")).toBe("approved by reviewer");
    // A replay, not a conflict: the same token returned the stored result.
    expect(h.query(".notice.conflict")).toBeNull();
  });

  it("validation errors surface inline and leave the task pending", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("trim_verify", "vid-a", trimPayload(2, 8, 11));
    gateway.failDecisionOnce = { status: 400, detail: "trim window out of range" };
    const h = await mount(gateway);
    await h.open(id);

    await h.click(".nudge-button.start-plus");
    await h.click(".action.submit-correction");

    expect(h.text(".inline-error")).toBe("trim window out of range");
    expect(gateway.getStatus(id)).toBe("pending");
    expect(h.query(".decided")).toBeNull();
    // The draft survives the failure and can be resubmitted.
    expect(h.text(".draft-start")).toBe("3");
    await h.click(".action.submit-correction");
    expect(gateway.getStatus(id)).toBe("corrected");
    expect(h.query(".inline-error")).toBeNull();
  });

  it("a conflict refreshes to the recorded decision without recording another", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    const h = await mount(gateway);
    await h.open(id);

    gateway.decideDirectly(id, "rejected");
    await h.click(".action.approve");

    expect(h.query(".notice.conflict")).not.toBeNull();
    expect(h.text(".decided .status")).toBe("rejected by other-reviewer");
    expect(gateway.decisions).toHaveLength(0);
    expect(h.query(".actions")).toBeNull();
  });

  it("relabeling submits a correction and shows old to new", async () => {
    const gateway = new MockGateway();
    const id = gateway.addTask(
      "label_qc",
      "vid-a",
      labelPayload(["colectomy"], "robotic", "llm"),
    );
    const h = await mount(gateway);
    await h.open(id);

    expect(h.text(".llm-note")).toContain("candidate");
    expect(h.text(".proposal .provenance")).toBe("llm");

    await h.click(".chip-remove");
    const picker = h.find("select.vocab") as HTMLSelectElement;
    picker.value = "hysterectomy";
    picker.dispatchEvent(new Event("change", { bubbles: true }));
    await h.app.whenIdle();
    await h.click(".action.submit-correction");

    expect(gateway.getStatus(id)).toBe("corrected");
    expect(gateway.decisions[0]).toMatchObject({
      action: "correct",
      labels: { procedures: ["hysterectomy"], surgery_type: "robotic" },
    });
    expect(h.text(".old-new")).toBe("colectomy / robotic → hysterectomy / robotic");
  });

  it("fuzzed sequences always land on the API-reported terminal state", async () => {
    const rand = mulberry32(424242);
    const gateway = new MockGateway();
    const kinds: TaskKind[] = [];
    const ids: string[] = [];
    for (let i = 0; i < 12; i += 1) {
      const roll = rand();
      const video = `vid-${i}`;
      if (roll < 1 / 3) {
        ids.push(gateway.addTask("storyboard_verify", video, storyboardPayload(video)));
        kinds.push("storyboard_verify");
      } else if (roll < 2 / 3) {
        ids.push(gateway.addTask("trim_verify", video, trimPayload(3, 9, 15)));
        kinds.push("trim_verify");
      } else {
        ids.push(
          gateway.addTask(
            "label_qc",
            video,
            labelPayload(["appendectomy"], "non-robotic", "keyword"),
          ),
        );
        kinds.push("label_qc");
      }
    }
    const h = await mount(gateway);

    for (let i = 0; i < ids.length; i += 1) {
      await h.open(ids[i]);
      const roll = rand();
      if (roll < 0.4 || (roll >= 0.7 && kinds[i] === "storyboard_verify")) {
        await h.click(".action.approve");
      } else if (roll < 0.7) {
        await h.click(".action.reject");
      } else if (kinds[i] === "trim_verify") {
        await h.click(".nudge-button.start-plus");
        await h.click(".action.submit-correction");
      } else {
        await h.click(".type-option:not(.active)");
        await h.click(".action.submit-correction");
      }
      expect(h.text(".decided .status")).toContain(gateway.getStatus(ids[i]));
    }

    expect(gateway.decisions).toHaveLength(ids.length);
    const decidedOnce = new Set(gateway.decisions.map((d) => d.taskId));
    expect(decidedOnce.size).toBe(ids.length);
    expect(h.text(".queue-slot .empty-state")).toBe("No pending tasks. All reviews are done.");
  });
});
