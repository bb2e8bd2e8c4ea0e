import { afterEach, describe, expect, it, vi } from "vitest";
import { mount } from "./harness.js";
import {
  MockGateway,
  labelPayload,
  storyboardPayload,
  trimPayload,
} from "./mock_gateway.js";

afterEach(() => {
  vi.unstubAllGlobals();
});

function seededGateway(): MockGateway {
  const gateway = new MockGateway();
  gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
  gateway.addTask("trim_verify", "vid-b", trimPayload(2, 8, 11));
  gateway.addTask("storyboard_verify", "vid-c", storyboardPayload("vid-c"));
  gateway.addTask("label_qc", "vid-d", labelPayload(["colectomy"], "robotic", "keyword"));
  gateway.addTask("storyboard_verify", "vid-e", storyboardPayload("vid-e"));
  return gateway;
}

describe("queue rendering", () => {
  it("renders one row per pending task in API order", async () => {
    const h = await mount(seededGateway());
    const ids = h.all(".task-row").map((row) => row.dataset.taskId);
    expect(ids).toEqual(["task-0001", "task-0002", "task-0003", "task-0004", "task-0005"]);
  });

  it("badges count the full pending queue per kind", async () => {
    const h = await mount(seededGateway());
    const badge = (kind: string) =>
      h.find(`[data-kind="${kind}"] .badge`).textContent;
    expect(badge("storyboard_verify")).toBe("3");
    expect(badge("trim_verify")).toBe("1");
    expect(badge("label_qc")).toBe("1");
  });

  it("filtering by kind keeps API order and full-queue badges", async () => {
    const h = await mount(seededGateway());
    await h.click('[data-kind="storyboard_verify"]');
    const ids = h.all(".task-row").map((row) => row.dataset.taskId);
    expect(ids).toEqual(["task-0001", "task-0003", "task-0005"]);
    for (const row of h.all(".task-row .kind")) {
      expect(row.textContent).toBe("Storyboard");
    }
    expect(h.find('[data-kind="storyboard_verify"] .badge').textContent).toBe("3");
  });

  it("an empty filter shows an explicit per-kind empty state", async () => {
    const gateway = new MockGateway();
    gateway.addTask("storyboard_verify", "vid-a", storyboardPayload("vid-a"));
    const h = await mount(gateway);
    await h.click('[data-kind="label_qc"]');
    expect(h.text(".queue-slot .empty-state")).toBe("No pending Labels tasks.");
  });

  it("an empty queue shows the all-done message", async () => {
    const h = await mount(new MockGateway());
    expect(h.text(".queue-slot .empty-state")).toBe("No pending tasks. All reviews are done.");
  });

  it("a server error shows a banner with retry, not an empty queue", async () => {
    const gateway = seededGateway();
    gateway.failQueueOnce = 500;
    const h = await mount(gateway);
    expect(h.query(".banner-error")).not.toBeNull();
    expect(h.query(".queue-slot .empty-state")).toBeNull();
    expect(h.all(".task-row")).toHaveLength(0);
    await h.click(".banner-retry");
    expect(h.query(".banner-error")).toBeNull();
    expect(h.all(".task-row")).toHaveLength(5);
  });

  it("an unreachable gateway shows the offline banner, never a silent empty state", async () => {
    const gateway = seededGateway();
    gateway.rejectQueueOnce = true;
    const h = await mount(gateway);
    expect(h.query(".banner-offline")).not.toBeNull();
    expect(h.text(".banner-offline")).toContain("Cannot reach the gateway");
    expect(h.query(".queue-slot .empty-state")).toBeNull();
    await h.click(".banner-retry");
    expect(h.query(".banner-offline")).toBeNull();
    expect(h.all(".task-row")).toHaveLength(5);
  });

  it("decided tasks drop out of the pending queue after refresh", async () => {
    const h = await mount(seededGateway());
    await h.open("task-0001");
    await h.click(".action.approve");
    const ids = h.all(".task-row").map((row) => row.dataset.taskId);
    expect(ids).toEqual(["task-0002", "task-0003", "task-0004", "task-0005"]);
  });
});
