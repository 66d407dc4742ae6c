// SPDX-License-Identifier: GPL-2.0
/* Generic mixing helper; lives outside the protocol stack on purpose. */

#include <linux/types.h>

u32 fold_u64(u64 value)
{
	return (u32)(value >> 32) ^ (u32)value;
}
